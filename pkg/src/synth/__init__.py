from .dataset import ImageSample, SampleSet, SplitDataset
from .generator import GeneratorConfig, corrupt, generate, make_hard
from .storage import checksum, load_dataset, save_dataset
from .validator import DatasetValidator
