import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Ground-truth conversion
BOUNDARY_RADIUS = int(os.environ.get("PED_BOUNDARY_RADIUS", "2"))
SCREEN_TOP = int(os.environ.get("PED_SCREEN_TOP", "25"))
SCREEN_PER_KIND = int(os.environ.get("PED_SCREEN_PER_KIND", "10"))

# Boundary evaluation
# Values below 1 are a fraction of the image diagonal, otherwise absolute pixels
TOLERANCE = float(os.environ.get("PED_TOLERANCE", "0.0035"))
THRESHOLDS = int(os.environ.get("PED_THRESHOLDS", "99"))

# Instance matching
IOU_MIN = float(os.environ.get("PED_IOU_MIN", "0.5"))
TOP_T = int(os.environ.get("PED_TOP_T", "2"))
SCORE_MIN = float(os.environ.get("PED_SCORE_MIN", "0.0"))
INSTANCE_FEDGE = os.environ.get("PED_INSTANCE_FEDGE", "dataset")

# Loss reference
CLIP_EPS = float(os.environ.get("PED_CLIP_EPS", "1e-7"))
LOSS_ALPHAS = tuple(float(a) for a in os.environ.get("PED_LOSS_ALPHAS", "8,1,0.03").split(","))

# Runtime
JOBS = int(os.environ.get("PED_JOBS", "1"))
STRICT = os.environ.get("PED_STRICT", "True").lower() == "true"
SEED = int(os.environ.get("PED_SEED", "0"))
LOG_LEVEL = os.environ.get("PED_LOG_LEVEL", "INFO")

# Built-in category sets
CATEGORY_PRESETS = {
    "cityscapes": os.path.join(os.path.dirname(os.path.abspath(__file__)), "categories", "cityscapes.json"),
}

# File naming templates
FILE_LAYOUT = {
    "source": {
        "label": "{image_id}_label.png",
        "instance": "{image_id}_instance.png",
        "instance_manifest": "{image_id}_instance.json",
    },
    "converted": {
        "semantic_gt": "{image_id}_semantic.pedp",
        "instances_gt": "{image_id}_instances.json",
        "instance_edges": "{image_id}_instances.pedp",
        "ignore": "{image_id}_ignore.png",
        "manifest": "manifest.json",
    },
    "predicted": {
        "semantic": "{image_id}_semantic.pedp",
        "instance": "{image_id}_inst{index:03d}.pedp",
        "manifest": "predictions.json",
    },
}
