//! Built-in scenarios, stored as config files.

use crate::scheme::{ConfigError, SchemeConfig};

/// Constant data at rest; every step reproduces the initial state.
const STATIONARY: &str = r#"
[scheme]
final_time = 0.1
steps = 10
k0 = 1.0
ell = 0.0

[grid]
extent = [1.0]
cells = [32]

[data]
theta0 = "constant(1.0)"
chi0 = "constant(0.3)"

[epsilon]
policy = "ladder"
start = 0.01
min = 1e-5
"#;

/// β = 0, A = 0, ℓ = 0: two decoupled heat-type equations.
const SMOOTH: &str = r#"
[scheme]
final_time = 0.1
steps = 20
k0 = 1.0
ell = 0.0

[grid]
extent = [1.0]
cells = [128]

[monotone]
pi_slope = 1.0

[data]
theta0 = "cosine(1.0, 0.5, 2.0)"
chi0 = "cosine(0.5, 0.4, 1.0)"

[source]
kind = "harmonic"
amplitude = 1.0
omega = 10.0
profile = "cosine(0.0, 1.0, 1.0)"

[epsilon]
policy = "ladder"
start = 0.01
min = 1e-5
"#;

/// Double obstacle with the nonlocal sign; π(r) = r − 2 pushes χ into the
/// upper obstacle.
const DOUBLE_OBSTACLE: &str = r#"
[scheme]
final_time = 0.1
steps = 100
k0 = 1.0
ell = 1.0

[grid]
extent = [1.0]
cells = [128]

[monotone]
beta = "indicator_box(0.0, 1.0)"
nonlocal = "sign_nonlocal"
pi_slope = 1.0
pi_offset = -2.0

[data]
theta0 = "cosine(1.2, 0.3, 1.0)"
chi0 = "cosine(0.9, 0.08, 1.0)"
theta_star = "constant(1.0)"

[epsilon]
policy = "ladder"
start = 0.01
min = 1e-5
"#;

const SIGN_LOCAL: &str = r#"
[scheme]
final_time = 0.05
steps = 25
k0 = 0.5
ell = 0.5

[grid]
extent = [2.0]
cells = [64]

[monotone]
beta = "power(3)"
nonlocal = "sign_local"
pi_slope = -1.0

[data]
theta0 = "step(1.5, 0.8, 0.5)"
chi0 = "cosine(0.0, 0.8, 2.0)"

[source]
kind = "tabulated"
times = [0.0, 0.05]
profiles = ["constant(0.0)", "cosine(0.0, 2.0, 1.0)"]

[epsilon]
policy = "ladder"
start = 0.01
min = 1e-4
"#;

const POWER_2D: &str = r#"
[scheme]
final_time = 0.04
steps = 20
k0 = 1.0
ell = 0.8

[grid]
extent = [1.0, 1.0]
cells = [24, 24]

[monotone]
beta = "power(3)"
nonlocal = "sign_nonlocal"
pi_slope = 1.0
pi_offset = -0.5

[data]
theta0 = "gaussian(1.0, 0.5, 0.2)"
chi0 = "cosine(0.2, 0.3, 1.0)"
theta_star = "constant(1.1)"

[source]
kind = "harmonic"
amplitude = 2.0
omega = 50.0
profile = "gaussian(0.0, 1.0, 0.3)"

[epsilon]
policy = "ladder"
start = 0.01
min = 1e-4
"#;

pub const SCENARIOS: [(&str, &str); 5] = [
    ("stationary", STATIONARY),
    ("smooth", SMOOTH),
    ("double_obstacle", DOUBLE_OBSTACLE),
    ("sign_local", SIGN_LOCAL),
    ("power_2d", POWER_2D),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

/// Config text of a scenario.
pub fn text(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| t.trim_start())
}

pub fn scenario(name: &str) -> Result<SchemeConfig, ConfigError> {
    let text = text(name).ok_or_else(|| {
        ConfigError::Invalid(format!(
            "unknown scenario '{name}' (known: {})",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    SchemeConfig::from_toml(text)
}
