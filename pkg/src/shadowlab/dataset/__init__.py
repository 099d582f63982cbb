from .records import DatasetError, InstanceRecord, SceneData, SceneManifest, load_manifest, load_scene, save_manifest
from .synth import (
    ShadowTuple,
    ValidationReport,
    background_shadow_mask,
    build_tuples,
    read_tuple,
    synthesize_composite,
    synthesize_ground_truth,
    tuple_dirs,
    validate_tuple,
    write_tuple,
)
from .toy import ToySceneConfig, generate_toy_dataset, generate_toy_scene, split_scenes

__all__ = [
    "DatasetError", "InstanceRecord", "SceneData", "SceneManifest", "load_manifest",
    "load_scene", "save_manifest", "ShadowTuple", "ValidationReport",
    "background_shadow_mask", "build_tuples", "read_tuple", "synthesize_composite",
    "synthesize_ground_truth", "tuple_dirs", "validate_tuple", "write_tuple",
    "ToySceneConfig", "generate_toy_dataset", "generate_toy_scene", "split_scenes",
]
