"""annot3d: headless 3D semantic-labeling pipeline.

Scene preprocessing (chunking, LODs, voxelization), ray-paint annotation
sessions, multi-annotator fusion with entropy uncertainty, KNN label
filling, 2D label rendering, and area-weighted evaluation.
"""

__version__ = "0.1.0"
