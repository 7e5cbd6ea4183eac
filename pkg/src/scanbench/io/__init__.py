from scanbench.io.manifest import QueryManifest, QueryRecord, read_manifest, write_manifest
from scanbench.io.ply import PlyError, load_ply, save_ply
from scanbench.io.registry import ScanEntry, ScanRegistry, load_scan_registry, write_scan_registry
from scanbench.io.results import read_candidates, read_estimates, scan_of_image
from scanbench.io.rgbd import RgbdImage, read_rgbd, write_rgbd
