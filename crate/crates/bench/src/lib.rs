//! Fixtures shared by the benchmarks: a small trained model over Gaussian
//! blobs and pools of any size drawn from the same clusters.

use alfamix_core::data::gen_gaussian_blobs;
use alfamix_core::{Matrix, MlpSpec, ModelParams, ModelSnapshot, RngStream, TrainConfig};

pub const CLASSES: usize = 10;
pub const INPUT_DIM: usize = 32;

pub struct Fixture {
    pub snapshot: ModelSnapshot,
    pub labelled: Matrix,
    pub labels: Vec<usize>,
    pub pool: Matrix,
}

/// `labelled` training rows plus an unlabelled pool of `pool` rows.
pub fn fixture(labelled: usize, pool: usize, hidden: usize) -> Fixture {
    let per_class = (labelled + pool).div_ceil(CLASSES);
    let data = gen_gaussian_blobs(CLASSES, per_class, INPUT_DIM, 1.0, 1.0, 17).expect("valid blob parameters");
    let mut order: Vec<usize> = (0..data.len()).collect();
    RngStream::new(17).shuffle(&mut order);
    let (head, tail) = order.split_at(labelled);
    let labelled_x = data.features.select_rows(head);
    let labels: Vec<usize> = head.iter().map(|&i| data.labels[i]).collect();
    let root = RngStream::new(3);
    let model = ModelParams::init(&MlpSpec::new(INPUT_DIM, vec![hidden], CLASSES), &mut root.split("init"))
        .expect("valid spec");
    let cfg = TrainConfig { learning_rate: 1e-2, max_epochs: 50, ..TrainConfig::default() };
    let model = model.train(&labelled_x, &labels, &cfg, &mut root.split("train")).expect("training succeeds");
    Fixture {
        snapshot: ModelSnapshot::new(model),
        labelled: labelled_x,
        labels,
        pool: data.features.select_rows(&tail[..pool]),
    }
}

/// `n` standard normal points in `dim` dimensions.
pub fn gaussian_points(n: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed);
    let data = (0..n * dim).map(|_| rng.standard_normal()).collect();
    Matrix::new(n, dim, data).expect("shape matches")
}
