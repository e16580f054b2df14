#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icsieve"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

const GAMMA: [f64; 6] = [0.5, -0.3, 0.2, 0.0, 0.1, -0.2];
const BETA: f64 = 0.3;

/// Case-cohort file with one expensive covariate `x` and six cheap ones.
/// `z:a` is correlated with `x`. Visits at 1..6 with uniform jitter.
pub fn synthetic_csv(n: usize, q_s: f64, q_c: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("id,left,right,xi,eta,zeta,z:a,z:b,z:c,z:d,z:e,z:f,x:x\n");
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let mut z = [0.0; 6];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        z[0] = 0.7 * x + (1.0f64 - 0.49).sqrt() * z[0];
        let eta = BETA * x + GAMMA.iter().zip(&z).map(|(g, v)| g * v).sum::<f64>();
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let t = (-u.ln() / (0.01 * eta.exp())).sqrt();
        let visits: Vec<f64> = (1..=6).map(|k| k as f64 + rng.random_range(-0.3..0.3)).collect();
        let k = visits.iter().position(|v| t <= *v);
        let (left, right) = match k {
            Some(0) => (0.0, visits[0]),
            Some(k) => (visits[k - 1], visits[k]),
            None => (visits[5], f64::INFINITY),
        };
        let case = right.is_finite();
        let sub = rng.random::<f64>() < q_s;
        let sel = case && !sub && rng.random::<f64>() < q_c;
        let sampled = sub || sel;
        let right_cell = if case { format!("{right}") } else { "inf".to_string() };
        write!(out, "s{i},{left},{right_cell},{},{},{}", sampled as u8, sub as u8, sel as u8).unwrap();
        for v in z {
            write!(out, ",{v}").unwrap();
        }
        if sampled {
            writeln!(out, ",{x}").unwrap();
        } else {
            out.push_str(",\n");
        }
    }
    out
}

pub fn write_synthetic(dir: &Path, name: &str, n: usize, q_s: f64, q_c: f64, seed: u64) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, synthetic_csv(n, q_s, q_c, seed)).unwrap();
    path
}

pub fn without_wall_time(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(m) = v.get_mut("manifest").and_then(|m| m.as_object_mut()) {
        m.remove("wall_time_secs");
    }
    v
}
