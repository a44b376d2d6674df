use prorandconv::{sample_block, AugmentConfig, Image, PreparedBlock, RngStream};

fn main() {
    let mut rng = RngStream::new(1);
    let img = Image::new(
        3,
        32,
        32,
        (0..3072).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
    )
    .unwrap();
    let cfg = AugmentConfig::default();
    let params = sample_block(&cfg, 3, 32, 32, &RngStream::new(8)).unwrap();
    let block = PreparedBlock::new(&params, 32, 32, &cfg).unwrap();
    std::hint::black_box(block.apply_repeated(&img, 200).unwrap());
}
