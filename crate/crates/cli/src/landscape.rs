//! Loss-landscape slices along two random filter-normalized directions:
//! each direction is drawn from a Gaussian and rescaled per weight matrix
//! to match that matrix's Frobenius norm, so slices are comparable across
//! checkpoints.

use eer_core::train::{loss_on_batch, EERConfig, TrainError};
use eer_core::{ModelWeights, SequenceBatch, SeededRng, Tensor};

pub struct LandscapeCell {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
}

pub struct LandscapeGrid {
    pub direction_a: String,
    pub direction_b: String,
    pub span: f64,
    pub res: usize,
    pub cells: Vec<LandscapeCell>,
}

fn filter_normalized_direction(weights: &ModelWeights, rng: &mut SeededRng) -> ModelWeights {
    let mut dir = weights.clone();
    for (_, t) in dir.arrays_mut() {
        let gauss = Tensor::from_fn(t.rows(), t.cols(), |_, _| rng.normal());
        let gnorm = gauss.frobenius_norm();
        let target = t.frobenius_norm();
        *t = if gnorm > 0.0 {
            gauss.scale(target / gnorm)
        } else {
            Tensor::zeros(t.rows(), t.cols())
        };
    }
    dir
}

fn displaced(
    weights: &ModelWeights,
    a: &ModelWeights,
    b: &ModelWeights,
    x: f64,
    y: f64,
) -> ModelWeights {
    let mut out = weights.clone();
    out.add_scaled(a, x);
    out.add_scaled(b, y);
    out
}

/// Evaluates the weighted objective and its cross-entropy component over a
/// `res x res` grid spanning `[-span, span]` in both directions, on one
/// fixed batch.
pub fn landscape_grid(
    weights: &ModelWeights,
    batch: &SequenceBatch,
    cfg: &EERConfig,
    span: f64,
    res: usize,
    seed: u64,
) -> Result<LandscapeGrid, TrainError> {
    let mut rng_a = SeededRng::derived(seed, "landscape-dir", 1);
    let mut rng_b = SeededRng::derived(seed, "landscape-dir", 2);
    let dir_a = filter_normalized_direction(weights, &mut rng_a);
    let dir_b = filter_normalized_direction(weights, &mut rng_b);

    let coord = |i: usize| -> f64 {
        if res <= 1 {
            0.0
        } else {
            span * (2.0 * i as f64 / (res - 1) as f64 - 1.0)
        }
    };

    let mut cells = Vec::with_capacity(res * res);
    for i in 0..res {
        for j in 0..res {
            let (x, y) = (coord(i), coord(j));
            let point = if x == 0.0 && y == 0.0 {
                weights.clone()
            } else {
                displaced(weights, &dir_a, &dir_b, x, y)
            };
            let breakdown = loss_on_batch(&point, batch, cfg)?;
            cells.push(LandscapeCell {
                i,
                j,
                x,
                y,
                loss_total: breakdown.total,
                loss_ce: breakdown.task,
            });
        }
    }
    Ok(LandscapeGrid {
        direction_a: format!("filter-normalized:seed{seed}:a"),
        direction_b: format!("filter-normalized:seed{seed}:b"),
        span,
        res,
        cells,
    })
}

impl LandscapeGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# direction_a = {}\n", self.direction_a));
        out.push_str(&format!("# direction_b = {}\n", self.direction_b));
        out.push_str(&format!("# span = {}\n# res = {}\n", self.span, self.res));
        out.push_str("i,j,x,y,loss_total,loss_ce\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.9},{:.9}\n",
                c.i, c.j, c.x, c.y, c.loss_total, c.loss_ce
            ));
        }
        out
    }

    pub fn center_cell(&self) -> Option<&LandscapeCell> {
        self.cells.iter().find(|c| c.x == 0.0 && c.y == 0.0)
    }
}
