"""Dataset ingestion, preprocessing, splitting, partitioning and synthesis."""

from .dataset import (
    CLASS_NAMES,
    Dataset,
    DatasetShard,
    FrameSample,
    SequenceSample,
    load_folder_dataset,
    parse_frame_name,
    write_folder_dataset,
)
from .preprocess import from_tensor, grayscale, resize, to_tensor
from .sequences import assemble_sequences, build_sequence_dataset
from .split import partition_clients, stratified_split
from .synth import synth_generate

__all__ = [
    "CLASS_NAMES",
    "Dataset",
    "DatasetShard",
    "FrameSample",
    "SequenceSample",
    "assemble_sequences",
    "build_sequence_dataset",
    "from_tensor",
    "grayscale",
    "load_folder_dataset",
    "parse_frame_name",
    "partition_clients",
    "resize",
    "stratified_split",
    "synth_generate",
    "to_tensor",
    "write_folder_dataset",
]
