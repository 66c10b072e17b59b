# Probability tree for the circles dataset, on a 28x28 reference canvas.
# Second parameters of the normal draws are variances unless the dataset
# config says otherwise.

REFERENCE_CANVAS = 28
HUES = ("red", "blue")
HUE_PROBS = (0.5, 0.5)
HUE_RGB = {"red": (1.0, 0.0, 0.0), "blue": (0.0, 0.0, 1.0)}

RADIUS_BRANCHES = ("small", "large")
RADIUS_BRANCH_PROBS = (0.6, 0.4)
RADIUS_MEANS = {
    ("red", "small"): 4.0,
    ("red", "large"): 5.0,
    ("blue", "small"): 6.0,
    ("blue", "large"): 7.0,
}
RADIUS_SPREAD = 0.25

SHIFT_BRANCHES = ("near", "far")
SHIFT_BRANCH_PROBS = (0.7, 0.3)
SHIFT_MEANS = {
    "small": {"near": -6.0, "far": -3.0},
    "large": {"near": 0.0, "far": 3.0},
}
SHIFT_SPREAD = 0.5

FACTORS = ("hue", "radius_branch", "shift_branch")
