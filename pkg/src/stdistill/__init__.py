"""Graph teacher, graph-free MLP student, and embedding-level distillation
for multi-sensor traffic forecasting, on a small numpy autodiff engine."""
from .data import SynthConfig, TrafficTensor, load_traffic_csv, make_windows, synth_generate
from .distill import DistillConfig, distill_train, train_student, train_teacher
from .estimators import DistilledMLPRegressor, GraphTeacherRegressor
from .graph import SpatialGraph, build_graph, load_adjacency_csv
from .student import StudentConfig
from .teacher import TeacherConfig

__version__ = "0.1.0"

__all__ = [
    "DistillConfig", "DistilledMLPRegressor", "GraphTeacherRegressor", "SpatialGraph", "StudentConfig",
    "SynthConfig", "TeacherConfig", "TrafficTensor", "build_graph", "distill_train", "load_adjacency_csv",
    "load_traffic_csv", "make_windows", "synth_generate", "train_student", "train_teacher",
]
