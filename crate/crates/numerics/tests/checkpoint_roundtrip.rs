use anchormt_numerics::{load_checkpoint, save_checkpoint, ParamStore, Tensor};

#[test]
fn save_then_load_is_bit_exact() {
    let mut store = ParamStore::<f32>::new();
    store.add("emb", Tensor::from_fn(vec![7, 3], |i| (i as f32 * 0.37).sin()));
    store.add("bias", Tensor::from_fn(vec![1, 3], |i| -(i as f32) / 3.0));
    store.add("scalar", Tensor::new(vec![1, 1], vec![f32::MIN_POSITIVE]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&store, &path).unwrap();
    let back: ParamStore<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.len(), store.len());
    for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor.shape(), b.tensor.shape());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.tensor), bits(&b.tensor));
    }
}
