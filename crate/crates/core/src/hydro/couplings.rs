//! Model constants and their sign/ordering constraints.

use std::fmt;

/// Every constant of the model, grouped by the field pair it couples.
///
/// `c_vu, d_vu` couple the fourth-order velocity fields; `c_xv, d_xv` couple
/// the quadratic-flux fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CouplingSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub c_e: f64,
    pub d_e: f64,
    pub c_pe: f64,
    pub d_pe: f64,
    pub c_v: f64,
    pub d_v: f64,
    pub c_vu: f64,
    pub d_vu: f64,
    pub c_xv: f64,
    pub d_xv: f64,
}

/// Names of the constants in config-file order.
pub const COUPLING_NAMES: [&str; 14] = [
    "a", "b", "c", "d", "c_e", "d_e", "c_pe", "d_pe", "c_v", "d_v", "c_vu", "d_vu", "c_xv", "d_xv",
];

impl CouplingSet {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "a" => self.a,
            "b" => self.b,
            "c" => self.c,
            "d" => self.d,
            "c_e" => self.c_e,
            "d_e" => self.d_e,
            "c_pe" => self.c_pe,
            "d_pe" => self.d_pe,
            "c_v" => self.c_v,
            "d_v" => self.d_v,
            "c_vu" => self.c_vu,
            "d_vu" => self.d_vu,
            "c_xv" => self.c_xv,
            "d_xv" => self.d_xv,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "a" => &mut self.a,
            "b" => &mut self.b,
            "c" => &mut self.c,
            "d" => &mut self.d,
            "c_e" => &mut self.c_e,
            "d_e" => &mut self.d_e,
            "c_pe" => &mut self.c_pe,
            "d_pe" => &mut self.d_pe,
            "c_v" => &mut self.c_v,
            "d_v" => &mut self.d_v,
            "c_vu" => &mut self.c_vu,
            "d_vu" => &mut self.d_vu,
            "c_xv" => &mut self.c_xv,
            "d_xv" => &mut self.d_xv,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// Theoretical frequencies and increments; `None` where the product has
    /// the wrong sign.
    pub fn omega(&self) -> Option<f64> {
        root(-self.c * self.d)
    }

    pub fn gamma_e(&self) -> Option<f64> {
        root(self.c_e * self.d_e)
    }

    pub fn omega_pe(&self) -> Option<f64> {
        root(-self.c_pe * self.d_pe)
    }

    pub fn omega_v(&self) -> Option<f64> {
        root(-self.c_v * self.d_v)
    }

    pub fn gamma_vu(&self) -> Option<f64> {
        root(self.c_vu * self.d_vu)
    }

    pub fn gamma_xv(&self) -> Option<f64> {
        root(self.c_xv * self.d_xv)
    }

    /// Evaluates every constraint.
    pub fn check(&self) -> ConstraintReport {
        self.check_only(&ConstraintId::ALL)
    }

    pub fn check_only(&self, ids: &[ConstraintId]) -> ConstraintReport {
        ConstraintReport {
            checks: ids.iter().map(|&id| self.evaluate(id)).collect(),
        }
    }

    fn evaluate(&self, id: ConstraintId) -> ConstraintCheck {
        use ConstraintId::*;
        let (value, passed) = match id {
            Omega => positive(-self.c * self.d),
            GammaE => positive(self.c_e * self.d_e),
            OmegaPe => positive(-self.c_pe * self.d_pe),
            OmegaV => positive(-self.c_v * self.d_v),
            GammaVu => positive(self.c_vu * self.d_vu),
            GammaXv => positive(self.c_xv * self.d_xv),
            GammaEOverVu => ordering(self.gamma_e(), self.gamma_vu()),
            GammaEOverXv => ordering(self.gamma_e(), self.gamma_xv()),
        };
        ConstraintCheck { id, value, passed }
    }
}

fn root(square: f64) -> Option<f64> {
    (square > 0.0).then(|| square.sqrt())
}

fn positive(value: f64) -> (f64, bool) {
    (value, value > 0.0)
}

/// Margin `upper - lower`; fails when either side is undefined.
fn ordering(upper: Option<f64>, lower: Option<f64>) -> (f64, bool) {
    match (upper, lower) {
        (Some(u), Some(l)) => (u - l, u > l),
        _ => (f64::NAN, false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    Omega,
    GammaE,
    OmegaPe,
    OmegaV,
    GammaVu,
    GammaXv,
    GammaEOverVu,
    GammaEOverXv,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 8] = [
        ConstraintId::Omega,
        ConstraintId::GammaE,
        ConstraintId::OmegaPe,
        ConstraintId::OmegaV,
        ConstraintId::GammaVu,
        ConstraintId::GammaXv,
        ConstraintId::GammaEOverVu,
        ConstraintId::GammaEOverXv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintId::Omega => "ω² = −cd > 0",
            ConstraintId::GammaE => "γ_e² = c_e·d_e > 0",
            ConstraintId::OmegaPe => "ω_pe² = −c_pe·d_pe > 0",
            ConstraintId::OmegaV => "ω_v² = −c_v·d_v > 0",
            ConstraintId::GammaVu => "γ_vu² = c_vu·d_vu > 0",
            ConstraintId::GammaXv => "γ_xv² = c_xv·d_xv > 0",
            ConstraintId::GammaEOverVu => "γ_e > γ_vu",
            ConstraintId::GammaEOverXv => "γ_e > γ_xv",
        }
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluated inequality. `value` is the quantity required to be
/// positive (the squared frequency/increment, or the increment margin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub id: ConstraintId,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn failed(&self, id: ConstraintId) -> bool {
        self.checks.iter().any(|c| c.id == id && !c.passed)
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(
                f,
                "{:<5} {:<24} value = {}",
                if check.passed { "pass" } else { "FAIL" },
                check.id.name(),
                check.value
            )?;
        }
        if self.all_passed() {
            writeln!(f, "all constraints satisfied")
        } else {
            let names: Vec<&str> = self.failures().map(|c| c.id.name()).collect();
            writeln!(f, "violated: {}", names.join("; "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compliant() -> CouplingSet {
        CouplingSet {
            c: -1.0,
            d: 1.0,
            c_e: 1.0,
            d_e: 1.0,
            c_pe: -1.0,
            d_pe: 2.0,
            c_v: -2.0,
            d_v: 3.0,
            c_vu: 0.5,
            d_vu: 0.5,
            c_xv: 0.5,
            d_xv: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn compliant_set_passes() {
        let r = compliant().check();
        assert!(r.all_passed(), "{r}");
        assert!(r.to_string().contains("all constraints satisfied"));
        let margin = r.checks.iter().find(|c| c.id == ConstraintId::GammaEOverVu).unwrap();
        assert!((margin.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn same_sign_motion_constants_fail_omega() {
        let k = CouplingSet {
            c: 1.0,
            d: 1.0,
            ..compliant()
        };
        let r = k.check();
        assert!(r.failed(ConstraintId::Omega));
        assert!(r.to_string().contains("ω² = −cd > 0"));
    }

    #[test]
    fn equal_increments_fail_strictly() {
        let k = CouplingSet {
            c_vu: 1.0,
            d_vu: 1.0,
            ..compliant()
        };
        let r = k.check();
        assert!(r.failed(ConstraintId::GammaEOverVu));
        assert!(!r.failed(ConstraintId::GammaEOverXv));
    }

    #[test]
    fn name_lookup_round_trip() {
        let mut k = CouplingSet::default();
        for (i, name) in COUPLING_NAMES.iter().enumerate() {
            assert!(k.set(name, i as f64));
        }
        for (i, name) in COUPLING_NAMES.iter().enumerate() {
            assert_eq!(k.get(name), Some(i as f64));
        }
        assert!(!k.set("zeta", 1.0));
    }
}
