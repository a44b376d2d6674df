use std::path::Path;

use prorandconv::io::load_mnist;
use prorandconv::trainer::{train, Ablation, Architecture, TrainConfig};
use prorandconv::AugmentConfig;

fn main() {
    let arm: Ablation = std::env::args()
        .nth(1)
        .unwrap_or("full".into())
        .parse()
        .unwrap();
    let data = load_mnist(Path::new("data/mnist"), "train")
        .unwrap()
        .take(704)
        .unwrap()
        .to_network_input(32, 3)
        .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        train_samples: 704,
        ..TrainConfig::default()
    };
    let (aug, selection) = arm.plan(&AugmentConfig::default(), cfg.selection);
    let cfg = TrainConfig { selection, ..cfg };
    std::hint::black_box(train(&data, &Architecture::lenet(10), &aug, &cfg, |_| {}).unwrap());
}
