"""
Configuration for the Scene Graph Forge
Vocabulary schema, generation presets, enumeration limits and logging settings
"""

# CATEGORY KINDS
OBJECT_KIND = "object"
FLAT_KINDS = ("attribute", "relation", "scene_attr")
ALL_KINDS = (OBJECT_KIND,) + FLAT_KINDS

# ATTRIBUTE SUBCATEGORIES (nine primary categories)
ATTRIBUTE_SUBCATEGORIES = (
    "color",
    "material",
    "texture",
    "architectural_style",
    "state",
    "shape",
    "size",
    "human_descriptor",
    "adjective",
)

# RELATION SUBCATEGORIES
RELATION_SUBCATEGORIES = (
    "spatial",
    "functional",
    "interactional",
    "social",
    "emotional",
    "symbolic",
)

# SCENE ATTRIBUTE SUBCATEGORIES (tuple order is the caption precedence)
SCENE_ATTR_SUBCATEGORIES = (
    "artist",
    "genre",
    "painting_style",
    "painting_technique",
    "camera_model",
    "focal_length",
    "perspective",
    "aperture",
    "depth_of_field",
    "shot_scale",
    "location",
    "weather",
    "lighting",
    "camera_rig",
    "camera_movement",
    "video_editing_style",
    "temporal_span",
    "threed_attribute",
)

SUBCATEGORIES = {
    "attribute": ATTRIBUTE_SUBCATEGORIES,
    "relation": RELATION_SUBCATEGORIES,
    "scene_attr": SCENE_ATTR_SUBCATEGORIES,
}

# MEDIA GATES
TARGETS = ("image", "video", "threed")
MEDIA_VALUES = TARGETS + ("any",)

# Subcategory-level gate; an entry's own `media` field narrows it further
SCENE_ATTR_MEDIA = {
    "camera_rig": "video",
    "camera_movement": "video",
    "video_editing_style": "video",
    "temporal_span": "video",
    "threed_attribute": "threed",
}

# REALIZATION TEMPLATES (one {} placeholder each)
DEFAULT_TEMPLATES = {
    "artist": "by {}",
    "genre": "in the {} genre",
    "painting_style": "in the style of {}",
    "painting_technique": "rendered with {}",
    "camera_model": "shot on {}",
    "focal_length": "with a {} lens",
    "perspective": "seen from {}",
    "aperture": "at an aperture of {}",
    "depth_of_field": "with {} depth of field",
    "shot_scale": "framed as {}",
    "location": "at {}",
    "weather": "in {} weather",
    "lighting": "under {} lighting",
    "camera_rig": "filmed with {}",
    "camera_movement": "with {} camera movement",
    "video_editing_style": "edited with {}",
    "temporal_span": "over {}",
    "threed_attribute": "with {}",
}

ORDINAL_WORDS = (
    "first", "second", "third", "fourth", "fifth",
    "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth",
    "sixteenth", "seventeenth", "eighteenth", "nineteenth", "twentieth",
)

VOWELS = frozenset("aeiou")

# DECLARED CATALOG SIZES (full release)
TABLE_COUNTS = {
    "object": 28787,
    "attribute": 1494,
    "relation": 10492,
    "scene_attr": 2193,
}

# ENUMERATION
STRUCTURE_CEILING = 5_000_000   # Max stored structures per complexity
STORE_FILE_PATTERN = "structures_c{complexity:02d}.jsonl"
STORE_FORMAT_VERSION = 1

# SAMPLING
SEED_ATTACH_PROBABILITY = 0.5   # Seed expansion: link new part to the seed
MAX_SEED = 2 ** 64 - 1

# GENERATION PRESETS
PRESETS = {
    'paper-image': {
        'complexity_range': (3, 12),
        'scene_attr_range': (0, 5),
        'count': 10_000,
        'target': 'image',
    },
    'paper-video': {
        'complexity_range': (3, 12),
        'scene_attr_range': (0, 5),
        'count': 10_000,
        'target': 'video',
    },
    'paper-3d': {
        'complexity_range': (1, 3),
        'scene_attr_range': (0, 2),
        'count': 1_000,
        'target': 'threed',
    },
    'paper-hard-concepts': {
        'complexity_range': (3, 9),
        'scene_attr_range': (0, 5),
        'count': 778,
        'target': 'image',
    },
}

PROGRESS_STEPS = 10             # One progress log line per 10% of work

# ANALYSIS
DEFAULT_MIN_SUPPORT = 5         # Minimum captions per concept for gap ranking
DEFAULT_GAP_K = 100
TOP_FRACTION = 0.25             # Self-improvement selection share
CANDIDATES_PER_CAPTION = 8

# FILES AND ENVIRONMENT
DEFAULT_ROOT = ("physical_object", "n.01")   # Object tree root (lemma, sense)
STORE_DIR_ENV = "SGF_STORE_DIR"
DEFAULT_STORE_DIR = "structures"
SAMPLE_DATA_DIR = "sample_data"

# LOGGING CONFIGURATION
LOG_LEVEL = "INFO"              # DEBUG, INFO, WARNING, ERROR
LOG_TO_FILE = True              # Enable file logging
LOG_DIR = "logs"
LOG_FILE = "scene_graph_forge.log"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
