use editlab_core::{read_tensor, write_tensor, Rng, Shape, ValueDomain, VideoTensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn vten_roundtrip_is_identity(
        f in 1usize..4, c in 1usize..4, h in 1usize..6, w in 1usize..6,
        seed in any::<u64>(), tag in 0u8..3,
    ) {
        let domain = ValueDomain::from_tag(tag).unwrap();
        let shape = Shape::new(f, c, h, w).unwrap();
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..shape.len())
            .map(|_| match domain {
                ValueDomain::PixelU8 => rng.below(256) as f32,
                _ => f32::from_bits(rng.next_u32()),
            })
            .map(|v| if v.is_nan() { 0.5 } else { v })
            .collect();
        let t = VideoTensor::from_vec(shape, data, domain).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.domain(), t.domain());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn draws_depend_only_on_seed(seed in any::<u64>()) {
        let a = Rng::new(seed).gaussian([1, 1, 3, 3]).unwrap();
        let b = Rng::new(seed).gaussian([1, 1, 3, 3]).unwrap();
        prop_assert_eq!(a, b);
    }
}
