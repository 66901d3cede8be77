use deepercluster::checkpoint::{model_from_checkpoint, model_to_checkpoint};
use deepercluster::formats::{
    decode_checkpoint, decode_fmat, decode_images, decode_ivec, encode_checkpoint, encode_fmat, encode_images,
    encode_ivec, Checkpoint,
};
use deepercluster_core::model::{train_step_on_inputs, Classifiers, FeatureNet, HierTarget, Model, SgdConfig};
use deepercluster_core::numerics::{Matrix, Rng};
use deepercluster_core::preprocess::Image;
use proptest::prelude::*;

fn f32_matrix() -> impl Strategy<Value = Matrix> {
    (0usize..6, 0usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), r * c)
            .prop_map(move |v| Matrix::from_vec(r, c, v.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn f32_image() -> impl Strategy<Value = Image> {
    (prop::sample::select(vec![1usize, 3]), 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-1e3f32..1e3, c * h * w)
            .prop_map(move |px| Image::new(c, h, w, px.into_iter().map(f64::from).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn fmat_round_trips(m in f32_matrix()) {
        prop_assert_eq!(decode_fmat(&encode_fmat(&m)).unwrap(), m);
    }

    #[test]
    fn ivec_round_trips(v in prop::collection::vec(any::<i64>(), 0..50)) {
        prop_assert_eq!(decode_ivec(&encode_ivec(&v)).unwrap(), v);
    }

    #[test]
    fn img_round_trips(images in prop::collection::vec(f32_image(), 0..5)) {
        prop_assert_eq!(decode_images(&encode_images(&images).unwrap()).unwrap(), images);
    }

    #[test]
    fn checkpoint_round_trips(blocks in prop::collection::vec(("[a-z.0-9]{0,12}", f32_matrix()), 0..5)) {
        let ckpt = Checkpoint { blocks };
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap(), ckpt);
    }

    #[test]
    fn truncation_is_rejected(m in f32_matrix(), cut in 1usize..8) {
        let bytes = encode_fmat(&m);
        let cut = cut.min(bytes.len());
        prop_assert!(decode_fmat(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn malformed_headers_are_rejected() {
    let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut bytes = encode_fmat(&m);
    bytes[0] = b'G';
    assert!(decode_fmat(&bytes).unwrap_err().contains("magic"));

    let mut trailing = encode_fmat(&m);
    trailing.push(0);
    assert!(decode_fmat(&trailing).unwrap_err().contains("trailing"));

    // a huge declared size must fail cleanly rather than allocate
    let mut huge = b"IVEC1\0".to_vec();
    huge.extend_from_slice(&u64::MAX.to_le_bytes());
    assert!(decode_ivec(&huge).is_err());
    let mut wide = b"FMAT1\0".to_vec();
    wide.extend_from_slice(&u64::MAX.to_le_bytes());
    wide.extend_from_slice(&2u64.to_le_bytes());
    assert!(decode_fmat(&wide).is_err());

    assert!(decode_images(b"IMG1").is_err());
    let mut version = encode_checkpoint(&Checkpoint::default()).unwrap();
    version[6] = 9;
    assert!(decode_checkpoint(&version).unwrap_err().contains("version"));
}

fn round_to_f32(model: &mut Model) {
    let round = |v: &mut f64| *v = *v as f32 as f64;
    for l in model.net.layers_mut() {
        l.weight.as_mut_slice().iter_mut().for_each(round);
        l.bias.iter_mut().for_each(round);
    }
    let cls = &mut model.classifiers;
    for l in std::iter::once(&mut cls.v).chain(cls.w.iter_mut()) {
        l.weight.as_mut_slice().iter_mut().for_each(round);
        l.bias.iter_mut().for_each(round);
    }
}

#[test]
fn model_checkpoint_keeps_parameters_and_momentum() {
    let mut rng = Rng::new(5);
    let net = FeatureNet::new(&[6, 5, 4], &mut rng).unwrap();
    let mut model = Model::new(net, Classifiers::new(4, 3, 4, &mut rng));
    let fresh = model_from_checkpoint(&model_to_checkpoint(&model)).unwrap();
    assert!(fresh.net_momentum.buffers().is_empty());

    let x = Matrix::from_vec(2, 6, (0..12).map(|_| rng.normal()).collect()).unwrap();
    let targets = [
        HierTarget { super_class: 1, sub_class: 2 },
        HierTarget { super_class: 3, sub_class: 0 },
    ];
    train_step_on_inputs(&mut model, &x, &targets, &SgdConfig::default(), &[1, 2]).unwrap();
    round_to_f32(&mut model);
    let back = model_from_checkpoint(&decode_checkpoint(&encode_checkpoint(&model_to_checkpoint(&model)).unwrap()).unwrap())
        .unwrap();
    assert_eq!(back.net, model.net);
    assert_eq!(back.classifiers, model.classifiers);
    assert_eq!(back.net_momentum.buffers().len(), 4);
    assert_eq!(back.w_momentum.len(), 4);
    for (a, b) in back.net_momentum.buffers().iter().zip(model.net_momentum.buffers()) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}

#[test]
fn checkpoint_missing_classifier_is_an_error() {
    let mut rng = Rng::new(6);
    let model = Model::new(FeatureNet::new(&[3, 2], &mut rng).unwrap(), Classifiers::new(2, 2, 2, &mut rng));
    let mut ckpt = model_to_checkpoint(&model);
    ckpt.blocks.retain(|(n, _)| n != "w.1.bias");
    assert!(model_from_checkpoint(&ckpt).is_err());
}
