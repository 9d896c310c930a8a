use graphmark::gnn::{architecture, GnnModel, LayerKind};
use graphmark::graph::{generate_er, GraphFile};
use graphmark::verify::PredictionProvider;
use graphmark::Error;
use graphmark_cli::client::RemoteProvider;
use graphmark_cli::server::spawn;

fn model() -> GnnModel {
    let mut m = GnnModel::new(&architecture(LayerKind::NormalizedConv, 4, 8, 3, 3), 5).unwrap();
    m.name = "suspect".into();
    m
}

fn post(url: &str, body: String) -> (u16, serde_json::Value) {
    let resp = reqwest::blocking::Client::new()
        .post(format!("{url}/predict"))
        .header("content-type", "application/json")
        .body(body)
        .send()
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap())
}

#[test]
fn health_and_prediction_shape() {
    let server = spawn(model(), "127.0.0.1:0").unwrap();
    let health = reqwest::blocking::get(format!("{}/health", server.url())).unwrap().text().unwrap();
    assert_eq!(health, "ok");

    let g = generate_er(12, 0.3, 4, 1).unwrap();
    let (status, body) = post(&server.url(), serde_json::to_string(&GraphFile::from(&g)).unwrap());
    assert_eq!(status, 200);
    // black-box contract: nothing beyond the name echo and softmax rows
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["model_name", "probabilities"]);
    assert_eq!(body["model_name"], "suspect");
    let rows = body["probabilities"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows {
        let r: Vec<f64> = serde_json::from_value(r.clone()).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn malformed_requests_get_field_errors_and_service_survives() {
    let server = spawn(model(), "127.0.0.1:0").unwrap();
    let url = server.url();
    let cases = [
        (r#"{"num_nodes":2,"feature_dim":3,"features":[1,2,3,4,5,6],"edges":[[0,1]]}"#, "feature_dim"),
        (r#"{"num_nodes":2,"feature_dim":4,"features":[1,2,3],"edges":[]}"#, "features"),
        (r#"{"num_nodes":2,"feature_dim":4,"features":[1,2,3,4,5,6,7,8],"edges":[[0,5]]}"#, "edges[0]"),
        (r#"{"num_nodes":1,"feature_dim":4,"features":[1,2,3,4],"edges":[],"labels":[0]}"#, "labels"),
        (r#"{"num_nodes":1,"feature_dim":4,"features":[1,2,3,4],"edges":[],"weights":[0]}"#, "weights"),
        (r#"{"num_nodes":1"#, "<document>"),
    ];
    for (body, field) in cases {
        let (status, err) = post(&url, body.to_string());
        assert!((400..500).contains(&status), "{body}: {status}");
        assert_eq!(err["field"], field, "{body}: {err}");
    }
    let g = generate_er(5, 0.5, 4, 2).unwrap();
    let (status, _) = post(&url, serde_json::to_string(&GraphFile::from(&g)).unwrap());
    assert_eq!(status, 200);
}

#[test]
fn remote_provider_matches_local_bit_for_bit() {
    let m = model();
    let server = spawn(m.clone(), "127.0.0.1:0").unwrap();
    let remote = RemoteProvider::new(&server.url()).unwrap();
    for seed in 0..5 {
        let g = generate_er(30, 0.2, 4, seed).unwrap();
        let local = m.predict(&g).unwrap();
        let wire = remote.predict(&g).unwrap();
        let bits = |x: &graphmark::Matrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&local), bits(&wire));
    }
    assert_eq!(remote.calls(), 5);
}

#[test]
fn provider_errors_are_typed() {
    let server = spawn(model(), "127.0.0.1:0").unwrap();
    let remote = RemoteProvider::new(&server.url()).unwrap();
    let wrong_dim = generate_er(6, 0.5, 7, 0).unwrap();
    assert!(matches!(remote.predict(&wrong_dim), Err(Error::Protocol(_))));
    let url = server.url();
    drop(server);
    let gone = RemoteProvider::new(&url).unwrap();
    assert!(matches!(gone.predict(&generate_er(6, 0.5, 4, 0).unwrap()), Err(Error::Transport(_))));
}
