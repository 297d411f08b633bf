use ndarray::Array2;

use lfe_design::net::{load_network, save_network, Layout, NetworkHeader, NetworkParams, Normalization};

fn fixed_net() -> NetworkParams {
    let norm = Normalization {
        input_scale: 2.0,
        output_shift: vec![0.1, -0.3],
        output_scale: vec![0.5, 2.0],
    };
    let mut net = NetworkParams::zeros(Layout::new(5, 2, 3, 2), norm);
    for (i, v) in net.data.iter_mut().enumerate() {
        *v = 0.5 * (0.37 * i as f64 + 0.1).sin();
    }
    net
}

// reference from an independent numpy implementation of the same layout
#[test]
fn forward_matches_reference_vector() {
    let net = fixed_net();
    assert_eq!(net.len(), 134);
    let w = [1.0, 0.0, 0.5, 2.0, 0.25];
    let d = [3.0, -1.0, 0.7, 1.2, -0.4];
    let q = net.forward(&w, &d, 0.07).unwrap();
    let want = [-0.162_601_929_757_654_33, -1.066_356_714_477_419_3];
    for (a, b) in q.iter().zip(want) {
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let net = fixed_net();
    let d = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
    let w = [0.3, 1.0, 0.0, 2.0, 0.7];
    let s = [0.0, 0.05, 0.1, 0.19];
    assert_eq!(net.forward_batch(&w, d.view(), &s).unwrap(), net.forward_batch(&w, d.view(), &s).unwrap());
}

#[test]
fn saved_network_reproduces_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixed_net();
    let p = dir.path().join("n.bin");
    save_network(&p, &net, &NetworkHeader::describe(&net, "exp", 9, Some("w.csv".into()))).unwrap();
    let (back, header) = load_network(&p).unwrap();
    assert_eq!(header.seed, 9);
    assert_eq!(header.design_file.as_deref(), Some("w.csv"));
    let w = [1.0; 5];
    let d = [0.5; 5];
    assert_eq!(back.forward(&w, &d, 0.02).unwrap(), net.forward(&w, &d, 0.02).unwrap());
}

#[test]
fn corrupted_header_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.bin");
    std::fs::write(&p, [8u8, 0, 0, 0, 0, 0, 0, 0, b'{', b'x', 0, 0, 0, 0, 0, 0]).unwrap();
    let e = load_network(&p).unwrap_err();
    assert!(matches!(e, lfe_design::Error::Format { .. }), "{e}");
}
