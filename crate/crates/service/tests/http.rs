use std::sync::Arc;

use lfid_client::Client;
use lfid_core::api::MinutiaPoint;
use lfid_core::config::Config;
use lfid_core::extract::{Extractor, Models};
use lfid_core::gallery::GalleryIndex;
use lfid_core::image::Gray;
use lfid_core::synthetic::{degrade_to_latent, synthetic_print, LatentParams, PrintParams};
use lfid_service::{serve, AppState};
use lfid_client::StatusCode;

struct Running {
    client: Client,
    _dir: tempfile::TempDir,
}

async fn start() -> Running {
    let dir = tempfile::tempdir().unwrap();
    let models = Arc::new(Models::untrained(8).unwrap());
    let mut gallery = GalleryIndex::new(models.clone());
    gallery.save(dir.path()).unwrap();
    let state = Arc::new(AppState::new(Extractor::new(Config::default(), models), gallery));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, state));
    let client = Client::new(format!("http://{addr}"));
    client.health().await.unwrap();
    Running { client, _dir: dir }
}

fn print(seed: u64) -> lfid_core::synthetic::SyntheticPrint {
    synthetic_print(&PrintParams { seed, ..PrintParams::default() })
}

fn pgm(img: &Gray) -> Vec<u8> {
    img.to_pgm_bytes().unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn examiner_round_trip() {
    let srv = start().await;
    let c = &srv.client;
    for seed in [31, 32, 33] {
        let r = c.enroll(&format!("ref-{seed}"), pgm(&print(seed).image)).await.unwrap();
        assert!(r.minutiae > 0 && r.virtual_minutiae > 0);
    }
    let dup = c.enroll("ref-31", pgm(&print(31).image)).await.unwrap_err();
    assert_eq!(dup.status(), Some(StatusCode::CONFLICT));

    let img = c.reference_image("ref-32").await.unwrap();
    let back = Gray::from_encoded_bytes(&img).unwrap();
    assert_eq!((back.width(), back.height()), (320, 320));
    assert_eq!(c.reference_image("nobody").await.unwrap_err().status(), Some(StatusCode::NOT_FOUND));

    let latent = degrade_to_latent(&print(32), &LatentParams { coverage: 0.8, seed: 4, ..LatentParams::default() });
    let created = c.create_case(pgm(&latent), Some("case-a")).await.unwrap();
    assert_eq!(created.version, 1);
    let view = c.case("case-a").await.unwrap();
    assert_eq!((view.width, view.height), (320, 320));
    assert_eq!(view.fields.orientation.len(), view.fields.rows * view.fields.cols);
    assert_eq!(view.minutiae.len(), created.minutiae);
    use base64::Engine as _;
    let pixels = base64::engine::general_purpose::STANDARD.decode(&view.image_pgm).unwrap();
    assert_eq!(Gray::from_encoded_bytes(&pixels).unwrap().width(), 320);

    let found = c.search_case("case-a", 3).await.unwrap();
    assert_eq!(found.candidates.len(), 3);
    assert!(found.candidates.windows(2).all(|w| w[0].candidate.fused_score >= w[1].candidate.fused_score));

    let mut edited: Vec<MinutiaPoint> = view.minutiae.clone();
    edited.push(MinutiaPoint { x: 160.0, y: 150.0, theta: 1.0 });
    let stale = c.put_minutiae("case-a", 0, edited.clone()).await.unwrap_err();
    assert_eq!(stale.status(), Some(StatusCode::CONFLICT));
    let outside = c.put_minutiae("case-a", 1, vec![MinutiaPoint { x: 900.0, y: 1.0, theta: 0.0 }]).await.unwrap_err();
    assert_eq!(outside.status(), Some(StatusCode::BAD_REQUEST));
    let saved = c.put_minutiae("case-a", 1, edited.clone()).await.unwrap();
    assert_eq!((saved.version, saved.minutiae), (2, edited.len()));
    assert_eq!(c.case("case-a").await.unwrap().minutiae, edited);
    let again = c.search_case("case-a", 2).await.unwrap();
    assert_eq!((again.version, again.candidates.len()), (2, 2));

    let plain = c.search_image(pgm(&latent), 3).await.unwrap();
    assert_eq!(plain.candidates.len(), 3);
}

#[tokio::test]
async fn bad_requests_are_reported() {
    let srv = start().await;
    let c = &srv.client;
    assert_eq!(c.case("missing").await.unwrap_err().status(), Some(StatusCode::NOT_FOUND));
    assert_eq!(c.search_case("missing", 5).await.unwrap_err().status(), Some(StatusCode::NOT_FOUND));
    assert_eq!(c.create_case(b"not an image".to_vec(), None).await.unwrap_err().status(), Some(StatusCode::BAD_REQUEST));
    assert_eq!(c.enroll("bad id!", pgm(&print(1).image)).await.unwrap_err().status(), Some(StatusCode::BAD_REQUEST));
    let blank = Gray::filled(128, 128, 120.0);
    let made = c.create_case(pgm(&blank), None).await.unwrap();
    assert_eq!(made.minutiae, 0);
    let empty = c.search_case(&made.id, 5).await.unwrap();
    assert!(empty.candidates.is_empty());
    assert_eq!(c.search_case(&made.id, 0).await.unwrap_err().status(), Some(StatusCode::BAD_REQUEST));
}
