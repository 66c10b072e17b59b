# Two curve types with one breakpoint each, on a grid over [0, 1]. Slope and
# intercept ranges keep noiseless curves inside [0, 1].

CURVE_TYPES = ("A", "B")
CURVE_TYPE_PROBS = (0.5, 0.5)
BREAKPOINT_RANGES = {"A": (0.2, 0.3), "B": (0.5, 0.6)}
SLOPE1_RANGES = {"A": (2.0, 2.4), "B": (0.3, 0.4)}  # A steep, B shallow
SLOPE2_RANGES = {"A": (0.1, 0.2), "B": (1.2, 1.3)}  # A flat, B steeper
CURVE_INTERCEPT = 0.05

STRIPE_PERIOD = 4  # Pixels per texture cycle
TEXTURE_NOISE_STD = 0.05

CURVE_FACTORS = ("type",)
