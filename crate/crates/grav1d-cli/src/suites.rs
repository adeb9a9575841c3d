//! The verification suites driven by `grav1d verify`.

use grav1d::constraints::{commutator_report, flow_polymer_check, join_check, puncture_dilaton_report, virasoro_report, Family};
use grav1d::graphs::{oracle_compare, OracleTarget};
use grav1d::icoords::{compute_i, f_in_i, roundtrip_report};
use grav1d::npoint::{genus0_report, marked_tree_report, one_point_report};
use grav1d::partition::free_energy_full;
use grav1d::spectral::spectral_report;
use grav1d::{Check, Monomial, Rational, Report, Result};

use crate::config::RunConfig;

/// Every suite name, in run order.
pub const SUITES: [&str; 8] = ["flow", "polymer", "virasoro", "join", "icoords", "graphs", "npoint", "spectral"];

/// Deliberate faults used to exercise the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Flip the sign of the `I_0³ I_2` term of `F_0` in I-coordinates.
    F0InISign,
}

/// Runs one suite at the configured truncation.
pub fn run_suite(name: &str, cfg: &RunConfig, fault: Option<Fault>) -> Result<Report> {
    let (k, d) = (cfg.kmax, cfg.dmax);
    match name {
        "flow" => {
            let mut r = flow_polymer_check(k, d, k.min(6))?;
            r.checks.retain(|c| c.name != "polymer");
            Ok(r)
        }
        "polymer" => {
            let mut r = flow_polymer_check(k, d, 0)?;
            r.checks.retain(|c| c.name == "polymer");
            r.absorb("puncture-dilaton", puncture_dilaton_report(k, d)?);
            Ok(r)
        }
        "virasoro" => {
            let mut r = virasoro_report(k.min(5) as i32, k, d)?;
            r.absorb("commutators", commutator_report(Family::L, 2, k.min(4), d.min(5))?);
            Ok(r)
        }
        "join" => {
            let mut r = Report::new();
            for ns in [vec![1, 1], vec![1, 2], vec![2, 2], vec![1, 1, 1]] {
                if ns.iter().sum::<usize>() - 1 <= k {
                    r.series(format!("join {ns:?}"), &join_check(&ns, k, d)?);
                }
            }
            Ok(r)
        }
        "icoords" => icoords_suite(cfg, fault),
        "graphs" => {
            let mut r = Report::new();
            let edges = (d / 2).clamp(1, 4);
            r.absorb("F", oracle_compare(OracleTarget::F, edges)?);
            r.absorb("Z", oracle_compare(OracleTarget::Z, edges)?);
            r.absorb("I0", oracle_compare(OracleTarget::I0, d.min(6))?);
            Ok(r)
        }
        "npoint" => {
            let order = (k + 2).min(d as usize) as i32;
            let mut r = one_point_report(k, d, order)?;
            let lmax = (k + 2).min(d as usize).min(4);
            r.absorb("genus0", genus0_report(k, d, order, lmax)?);
            if k >= 2 && d >= 5 {
                r.absorb("marked", marked_tree_report(k, d, order, 3, 1)?);
            }
            Ok(r)
        }
        "spectral" => spectral_report(k, d, d as usize + 2, (k as i32 - 1).clamp(0, 4)),
        other => Err(grav1d::Error::Domain(format!("unknown suite {other:?}"))),
    }
}

/// The round trip `t → I → t` and `F_g` in I-coordinates for `g ≤ min(gmax, 3)`.
fn icoords_suite(cfg: &RunConfig, fault: Option<Fault>) -> Result<Report> {
    let f = free_energy_full(cfg.kmax, cfg.dmax)?;
    let bundle = compute_i(f.spec().with_window(0, 0))?;
    let mut r = roundtrip_report(&bundle)?;
    for g in 0..=cfg.gmax.min(3) {
        let mut fg = f_in_i(g, &f)?;
        if g == 0 && fault == Some(Fault::F0InISign) {
            let m = Monomial::from_sparse(&[(0, 3), (2, 1)], 0);
            let c = fg.poly.coeff(&[(0, 3), (2, 1)], 0);
            fg.poly.add_term(m, 0, -(c * Rational::from_integer(2.into())));
        }
        let value = fg.eval(&bundle)?;
        let slice = f.slice_l(g as i32 - 1).shift_l(1 - g as i32).retruncate(bundle.spec);
        r.series(format!("F_{g} in I"), &(&value - &slice));
    }
    if fault.is_some() && cfg.dmax < 4 {
        r.push(Check::flag("fault injection", false, "the injected fault needs dmax >= 4"));
    }
    Ok(r)
}
