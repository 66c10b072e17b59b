# Partial configs merged under user config files. The "-full" presets use
# full-size images, a held-out split and the small learning rates of long
# desk runs.

PRESETS = {
    "circles": {
        "dataset": {"kind": "circles", "n": 1024, "image_size": [16, 16]},
        "model": {
            "latent_dim": 2,
            "arities": [2, 2, 2],
            "encoder_widths": [64, 32, 16],
            "decoder_widths": [16, 32, 64],
            "decoders": {"image": "shared"},
        },
        "train": {
            "learning_rate": 1e-3,
            "epochs": 300,
            "batch_size": 64,
            "pretrain_mode": "reconstruction",
            "pretrain_epochs": 20,
            "beta": {"beta_init": 1.0, "beta_final": 0.01, "update_every": 200},
            "xi_noise_std": 0.01,
        },
    },
    "circles-full": {
        "dataset": {
            "kind": "circles",
            "n": 4096,
            "image_size": [28, 28],
            "split": [0.81, 0.09, 0.1],
        },
        "model": {
            "latent_dim": 2,
            "arities": [2, 2, 2],
            "encoder_widths": [128, 64, 32, 16],
            "decoder_widths": [16, 32, 64, 128],
            "decoders": {"image": "shared"},
        },
        "train": {"learning_rate": 1e-6, "pretrain_mode": "reconstruction"},
    },
    "curves": {
        "dataset": {"kind": "curves", "n": 256, "grid_len": 100, "image_size": [8, 8]},
        "model": {
            "latent_dim": 2,
            "arities": [2, 2],
            "encoder_widths": [32, 16],
            "decoder_widths": [16, 32],
            "decoders": {"image": "shared", "curve": "expert"},
        },
        "train": {
            "learning_rate": 5e-3,
            "epochs": 150,
            "batch_size": 32,
            "pretrain_mode": "reconstruction",
            "pretrain_epochs": 20,
        },
    },
    "lattice-full": {
        "dataset": {
            "kind": "curves",
            "n": 91,
            "grid_len": 100,
            "image_size": [32, 32],
            "split": [0.81, 0.09, 0.1],
            "flip": True,
        },
        "model": {
            "latent_dim": 2,
            "arities": [2, 2],
            "decoders": {"image": "shared", "curve": "expert"},
        },
        "train": {"learning_rate": 1.25e-5, "pretrain_mode": "reconstruction"},
    },
}
