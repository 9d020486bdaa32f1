from .run import SegmentationRun
