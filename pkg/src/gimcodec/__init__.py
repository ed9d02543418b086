"""Multi-chart geometry images: chart an authored UV atlas, pack it equal-area, sample surfaces into rasters and back."""

from .atlas import (AtlasLayout, ChartSet, coverage_filter, detect_creases, detect_seams, equal_area_rescale,
                    pack_atlas, prepare_layout, split_charts, verify_injective)
from .codec import (AlbedoImage, CylindricalParams, GeometryImage, encode_gim, extract_mesh, from_cylindrical,
                    resample_albedo, rotate_atlas, to_cylindrical, validate_gim)
from .fidelity import FidelityReport, area_distortion, chamfer_distance, roundtrip_report
from .mesh import Mesh, NormalizationParams, load_mesh, load_mesh_file, normalize_mesh, save_mesh

__version__ = "0.1.0"
