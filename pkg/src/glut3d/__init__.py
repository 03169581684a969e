"""Continuous 3D color LUTs as mixtures of learnable Gaussian primitives."""

from .cglut import (
    CglutModel,
    StyleBatch,
    backward_cglut,
    blend,
    deserialize_cglut,
    evaluate_style,
    fit_cglut,
    generate_params,
    init_cglut,
    load_any_model,
    materialize_style,
    serialize_cglut,
)
from .editing import (
    DegenerateEditError,
    EditConstraint,
    EditRecord,
    LineageError,
    apply_edit,
    edit_influence_map,
    replay_journal,
    residual,
    select_topk,
    undo,
    write_journal,
)
from .eval_bench import (
    BenchReport,
    EvalReport,
    compression_ratio,
    eval_on_split,
    flops_per_pixel,
    throughput_bench,
)
from .glut_core import (
    GaussianPrimitive,
    GlutModel,
    ModelFormatError,
    ModelKindError,
    WEIGHT_EPS,
    apply_to_image,
    bake_to_cube,
    deserialize,
    evaluate,
    evaluate_sparse,
    evaluate_unclamped,
    gaussian_density,
    influence_weights,
    serialize,
)
from .glut_train import (
    DivergenceError,
    MiningSchedule,
    TrainConfig,
    backward,
    fit_glut,
    init_glut,
    total_loss,
)
from .lut_io import (
    ColorPairSet,
    CubeLut,
    CubeParseError,
    HaldRaster,
    ImageIOError,
    build_split,
    hald_index_to_color,
    identity_lut,
    parse_cube,
    read_image,
    trilinear_sample,
    write_cube,
    write_image,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "CglutModel",
    "ColorPairSet",
    "CubeLut",
    "CubeParseError",
    "DegenerateEditError",
    "DivergenceError",
    "EditConstraint",
    "EditRecord",
    "EvalReport",
    "GaussianPrimitive",
    "GlutModel",
    "HaldRaster",
    "ImageIOError",
    "LineageError",
    "MiningSchedule",
    "ModelFormatError",
    "ModelKindError",
    "StyleBatch",
    "TrainConfig",
    "WEIGHT_EPS",
    "apply_edit",
    "apply_to_image",
    "backward",
    "backward_cglut",
    "bake_to_cube",
    "blend",
    "build_split",
    "compression_ratio",
    "deserialize",
    "deserialize_cglut",
    "edit_influence_map",
    "eval_on_split",
    "evaluate",
    "evaluate_sparse",
    "evaluate_style",
    "evaluate_unclamped",
    "fit_cglut",
    "fit_glut",
    "flops_per_pixel",
    "gaussian_density",
    "generate_params",
    "hald_index_to_color",
    "identity_lut",
    "influence_weights",
    "init_cglut",
    "init_glut",
    "load_any_model",
    "materialize_style",
    "parse_cube",
    "read_image",
    "replay_journal",
    "residual",
    "select_topk",
    "serialize",
    "serialize_cglut",
    "throughput_bench",
    "total_loss",
    "trilinear_sample",
    "undo",
    "write_cube",
    "write_image",
    "write_journal",
]
