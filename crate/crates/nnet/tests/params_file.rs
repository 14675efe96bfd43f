use pnl_nnet::io::{decode_params, encode_params, read_config};
use pnl_nnet::{forward, init_params, load_params, save_params, ExecMode, ModelConfig, NnError, Tensor, Variant};

#[test]
fn save_load_is_bit_exact() {
    let cfg = ModelConfig::toy(Variant::CoordAttUNet);
    let p = init_params(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pnlw");
    save_params(&cfg, &p, &path).unwrap();
    let q = load_params(&cfg, &path).unwrap();
    assert_eq!(p, q);
    assert_eq!(read_config(&path).unwrap(), cfg);
    let x = Tensor::full(&[1, 1, 64, 64], 0.25);
    let a = forward(&cfg, &p, &x, ExecMode::Sequential).unwrap();
    let b = forward(&cfg, &q, &x, ExecMode::Sequential).unwrap();
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn other_config_is_rejected() {
    let cfg = ModelConfig::toy(Variant::AttentionUNet);
    let bytes = encode_params(&cfg, &init_params(&cfg, 1).unwrap()).unwrap();
    let other = ModelConfig::toy(Variant::CoordAttUNet);
    assert!(matches!(decode_params(&other, &bytes), Err(NnError::ConfigMismatch)));
    let unet = ModelConfig::toy(Variant::UNet);
    assert!(matches!(decode_params(&unet, &bytes), Err(NnError::ConfigMismatch)));
}

#[test]
fn corruption_is_an_io_error() {
    let cfg = ModelConfig::toy(Variant::UNet);
    let bytes = encode_params(&cfg, &init_params(&cfg, 1).unwrap()).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_params(&cfg, &flipped), Err(NnError::Io(_))));
    assert!(matches!(decode_params(&cfg, &bytes[..bytes.len() - 9]), Err(NnError::Io(_))));
    assert!(matches!(decode_params(&cfg, b"nope"), Err(NnError::Io(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_params(&cfg, dir.path().join("missing")), Err(NnError::Io(_))));
}

#[test]
fn off_grid_values_are_refused() {
    let cfg = ModelConfig::toy(Variant::UNet);
    let mut p = init_params(&cfg, 1).unwrap();
    p.get_mut("head.fc.bias").unwrap().data_mut()[0] = 0.1;
    assert!(matches!(encode_params(&cfg, &p), Err(NnError::NotF32(_))));
}
