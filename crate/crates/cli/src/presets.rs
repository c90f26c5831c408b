//! Canned scenario configs reproducing the study layouts.

/// (name, one-line description, config text). Ordering is stable.
pub const PRESETS: &[(&str, &str, &str)] = &[
    (
        "fig2",
        "object encoding: correlation + intensity images, no medium / medium / tailored",
        "\
scenario = encode-restore
seed = 92

[grid]
n = 32
pitch_um = 50

[object]
kind = digit8

[medium]
kind = thin
corr_len_px = 2
",
    ),
    (
        "fig3-opt",
        "guide-state optimization through a thin medium: trace, mask, before/after peaks",
        "\
scenario = optimize
seed = 93

[grid]
n = 32
pitch_um = 50

[medium]
kind = thin
corr_len_px = 2

[slm]
macro_n = 16

[optimization]
steps = 1500
",
    ),
    (
        "fig4-media",
        "object transmission through a chosen disorder (random-phase | thick-sim) after tailoring",
        "\
scenario = media-gallery
seed = 94

[grid]
n = 32
pitch_um = 50

[object]
kind = digit8

[medium]
kind = random-phase
corr_len_px = 3

[slm]
macro_n = 16

[optimization]
steps = 1200
",
    ),
    (
        "fig4-thick",
        "object transmission through a simulated thick medium after tailoring",
        "\
scenario = media-gallery
seed = 95

[grid]
n = 32
pitch_um = 50

[object]
kind = digit8

[medium]
kind = thick
corr_len_px = 3
envelope_sigma_px = 8

[slm]
macro_n = 16

[optimization]
steps = 1200
",
    ),
    (
        "sm2-events",
        "time-tagged event synthesis, coincidence pairing and accidental subtraction",
        "\
scenario = events
seed = 96

[grid]
n = 16
pitch_um = 50

[object]
kind = digit8

[events]
pair_rate_hz = 1e5
noise_rate_hz = 2e5
duration_s = 1.0
jitter_ns = 1.0
window_ns = 6.0
",
    ),
    (
        "sm5-tm",
        "phase-shifting Hadamard transmission-matrix measurement of a seeded medium",
        "\
scenario = tm-measure
seed = 97

[grid]
n = 16
pitch_um = 50

[medium]
kind = thin
corr_len_px = 2

[slm]
macro_n = 8
phase_steps = 4
",
    ),
    (
        "sm9-sigma",
        "first-harmonic signature of finite position correlations in the sweep response",
        "\
scenario = sigma-signature
seed = 98

[grid]
n = 32
pitch_um = 50

[medium]
kind = thin
corr_len_px = 2

[slm]
macro_n = 16

[optimization]
steps = 100
",
    ),
    (
        "sm11-classical",
        "entangled vs separable vs classical propagation through identity and non-trivial solutions",
        "\
scenario = classical-compare
seed = 99

[grid]
n = 16
pitch_um = 50

[object]
kind = digit8

[medium]
kind = thin
corr_len_px = 2
",
    ),
    (
        "sm12-macropixels",
        "restored-peak quality across 8x8 / 16x16 / 32x32 macropixel grids",
        "\
scenario = macropixel-study
seed = 100

[grid]
n = 32
pitch_um = 50

[medium]
kind = thin
corr_len_px = 2

[slm]
macro_list = 8,16,32

[optimization]
steps_list = 600,1500,2500
",
    ),
    (
        "sm13-multiplicity",
        "repeated seeded optimizations: distinct masks, two-peak distance to the identity mask",
        "\
scenario = multiplicity
seed = 101

[grid]
n = 16
pitch_um = 100

[medium]
kind = thin
corr_len_px = 2

[slm]
macro_n = 8

[optimization]
steps = 500
runs = 10
",
    ),
    (
        "sm14-diff-encoding",
        "difference-coordinate encoding restored by a pcp-class solution",
        "\
scenario = diff-encoding
seed = 102

[grid]
n = 16
pitch_um = 50

[object]
kind = digit8

[spdc]
sigma_k_per_m = 0
",
    ),
];

pub fn find(name: &str) -> Option<&'static (&'static str, &'static str, &'static str)> {
    PRESETS.iter().find(|(n, _, _)| *n == name)
}
