use crosspool_web::{compare_json, pooled_vector, render_rgba};

#[test]
fn renders_rgba_pixels() {
    let px = render_rgba(0, 3).unwrap();
    assert_eq!(px.len(), 20 * 20 * 4);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    assert!(px.chunks(4).any(|p| p[0] > 100));
    assert_eq!(px, render_rgba(0, 3).unwrap());
    assert!(render_rgba(3, 0).is_err());
}

#[test]
fn pooled_dims_follow_scheme() {
    assert_eq!(pooled_vector(1, 4, "cross-layer").unwrap().len(), 16 * 64);
    assert_eq!(pooled_vector(1, 4, "direct-max").unwrap().len(), 16);
    assert_eq!(pooled_vector(1, 4, "spp:1,2").unwrap().len(), 16 * 5);
    assert!(pooled_vector(1, 4, "median").is_err());
}

#[test]
fn comparison_table() {
    let text = compare_json(12, 5, "cross-layer; direct-max").unwrap();
    let rows: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["scheme"], "cross-layer");
    assert_eq!(rows[0]["dim"], 1024);
    for r in rows {
        let a = r["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
    assert!(rows[0]["accuracy"].as_f64().unwrap() >= 0.8);
    assert!(compare_json(0, 5, "cross-layer").is_err());
    assert!(compare_json(4, 5, " ; ").is_err());
}
