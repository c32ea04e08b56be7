# Static palette for scatter plots


from src.core.domain_models import EditMethod


class Colors:
    # Neutral
    gray = "#4b5563"  # Cool Gray
    light_gray = "#9ca3af"

    # Methods
    blue = "#2563eb"  # Royal Blue
    orange = "#ea580c"  # Burnt Orange
    teal = "#0d9488"
    purple = "#7c3aed"  # Violet
    red = "#dc2626"  # Red 600

    # Target reference outline
    green = "#059669"  # Emerald 600


SOURCE_COLOR = Colors.light_gray
TARGET_COLOR = Colors.green

# One color per sampler, stable across runs
METHOD_COLORS: dict[EditMethod, str] = {
    EditMethod.DIRECT: Colors.orange,
    EditMethod.INVERSION: Colors.purple,
    EditMethod.FLOWEDIT: Colors.blue,
    EditMethod.ANCHORFLOW: Colors.red,
    EditMethod.FIXED_ANCHOR: Colors.teal,
}

# Fallback order for labels outside the method table
COLOR_SCALE_CONTRAST = [
    Colors.blue,
    Colors.orange,
    Colors.teal,
    Colors.purple,
    Colors.red,
    Colors.gray,
]
