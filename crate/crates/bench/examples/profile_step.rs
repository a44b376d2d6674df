use prorandconv::trainer::{Architecture, ClassifierState};
use prorandconv::{Batch, Image, RngStream};

fn main() {
    let mut rng = RngStream::new(1);
    let images = (0..128)
        .map(|_| {
            Image::new(
                3,
                32,
                32,
                (0..3072).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            )
            .unwrap()
        })
        .collect();
    let b = Batch::new(images, Some((0..128).map(|i| i % 10).collect())).unwrap();
    let state = ClassifierState::<f32>::init(Architecture::lenet(10), &RngStream::new(5)).unwrap();
    for _ in 0..3 {
        std::hint::black_box(state.backward(&b).unwrap());
    }
}
