//! Analytic gradients against central finite differences on a miniature network.

use aerothreat::model::{total_loss, DualHeadNetwork, LossWeights, NetworkConfig};
use aerothreat::{LabelSpace, NumericArray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const H: f64 = 1e-5;

fn mini_config() -> NetworkConfig {
    let mut cfg = NetworkConfig::new(LabelSpace::new("pair", ["A", "B"]).unwrap());
    cfg.input_size = 8;
    cfg.conv3x3_filters = 4;
    cfg.conv1x1_filters = 6;
    cfg
}

struct Point {
    net: DualHeadNetwork,
    batch: NumericArray,
    class_t: Vec<usize>,
    threat_t: Vec<usize>,
    weights: LossWeights,
}

impl Point {
    fn loss(&self, net: &DualHeadNetwork) -> f64 {
        let out = net.predict(&self.batch).unwrap();
        total_loss(&out, &self.class_t, &self.threat_t, self.weights).unwrap()
    }
}

fn draw_point(seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DualHeadNetwork::new(mini_config(), rng.random()).unwrap();
    let b = 2;
    let batch = NumericArray::new(
        vec![b, 8, 8, 3],
        (0..b * 192).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    Point {
        net,
        batch,
        class_t: (0..b).map(|_| rng.random_range(0..2)).collect(),
        threat_t: (0..b).map(|_| rng.random_range(0..3)).collect(),
        weights: LossWeights::new(rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)),
    }
}

/// Worst relative error over every parameter of one point.
fn worst_error(p: &Point) -> f64 {
    let fwd = p.net.forward(&p.batch).unwrap();
    let grads = p.net.backward(&fwd, &p.class_t, &p.threat_t, p.weights).unwrap();
    let mut coords = Vec::new();
    for (e, entry) in p.net.params.entries().iter().enumerate() {
        for i in 0..entry.array.len() {
            coords.push((e, i));
        }
    }
    coords
        .par_iter()
        .map(|&(e, i)| {
            let mut net = p.net.clone();
            let base = net.params.entries()[e].array.values()[i];
            net.params.entries_mut()[e].array.values_mut()[i] = base + H;
            let up = p.loss(&net);
            net.params.entries_mut()[e].array.values_mut()[i] = base - H;
            let down = p.loss(&net);
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.entries()[e].array.values()[i];
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
        })
        .reduce(|| 0.0, f64::max)
}

pub struct GradReport {
    pub accepted: usize,
    pub drawn: u64,
    pub worst: f64,
}

/// Checks every parameter at `points` random points. Points with a ReLU
/// input within 1e-4 of its kink are redrawn, since the finite difference
/// would straddle the discontinuity in the derivative.
pub fn check(points: usize) -> GradReport {
    let mut accepted = 0;
    let mut drawn = 0;
    let mut worst = 0.0f64;
    while accepted < points {
        let p = draw_point(drawn);
        drawn += 1;
        let fwd = p.net.forward(&p.batch).unwrap();
        if fwd.cache().unwrap().min_abs_relu_input() < 1e-4 {
            continue;
        }
        worst = worst.max(worst_error(&p));
        accepted += 1;
    }
    GradReport { accepted, drawn, worst }
}
