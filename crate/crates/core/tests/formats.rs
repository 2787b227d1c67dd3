use std::path::Path;

use tdsal::error::Error;
use tdsal::inference::{CategoryModel, ModelBundle};
use tdsal::io::{decode_pnm, encode_map_pgm, encode_tensor, load_map, load_tensor, quantize, save_map};
use tdsal::manifest::{load_manifest, parse_manifest, save_manifest};
use tdsal::map::{PixelBox, SaliencyMap};
use tdsal::svm::LinearModel;

const HEADER: &str = "id,image_path,features_path,bu_maps,labels";

#[test]
fn half_quantizes_to_128() {
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    let m = SaliencyMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
    let pnm = decode_pnm(&encode_map_pgm(&m)).unwrap();
    assert_eq!(pnm.samples, vec![0, 128, 255]);
}

#[test]
fn map_files_reload_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let m = SaliencyMap::from_fn(4, 5, |r, c| (r * 5 + c) as f64 / 19.0).unwrap();
    let p = dir.path().join("m.pgm");
    save_map(&m, &p, true).unwrap();
    assert!(dir.path().join("m.ften").exists());
    let back = load_map(&p).unwrap();
    for (a, b) in back.values().iter().zip(m.values()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

fn root<T>(r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Context { source, .. } => *source,
        e => e,
    })
}

#[test]
fn tensor_errors() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    };
    let good = encode_tensor(&[2, 2, 1], [1.0f32, 2.0, 3.0, 4.0]);

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(root(load_tensor(&write("magic", &bad))), Err(Error::BadMagic { .. })));

    let trunc = &good[..good.len() - 2];
    assert!(matches!(root(load_tensor(&write("trunc", trunc))), Err(Error::DimMismatch(_))));

    let neg = encode_tensor(&[1, 1, 2], [1.0f32, -1.0]);
    assert!(matches!(
        root(load_tensor(&write("neg", &neg))),
        Err(Error::NegativeFeature { index: 1, .. })
    ));

    let nan = encode_tensor(&[1, 1, 1], [f32::NAN]);
    assert!(matches!(root(load_tensor(&write("nan", &nan))), Err(Error::NonFinite(0))));

    assert!(matches!(
        load_tensor(&dir.path().join("absent.ften")),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn manifest_roundtrip_with_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{HEADER},gt_masks,gt_boxes\n\
         a,images/a.ppm,features/a.ften,bu/a_x.pgm;bu/a_y.pgm,cat;dog,cat:gt/a_cat.pgm,cat:1:2:3:4;dog:0:0:5:5\n\
         b,,features/b.ften,,,,\n"
    );
    let m = parse_manifest(&text, dir.path()).unwrap();
    assert_eq!(m.len(), 2);
    let a = m.get("a").unwrap();
    assert_eq!(a.bu_map_paths.len(), 2);
    assert_eq!(a.features_path, dir.path().join("features/a.ften"));
    assert_eq!(a.boxes_for("cat").collect::<Vec<_>>(), vec![PixelBox::new(1, 2, 3, 4)]);
    assert_eq!(a.gt_mask_path("cat"), Some(dir.path().join("gt/a_cat.pgm").as_path()));
    assert_eq!(m.label_signs("dog"), vec![1.0, -1.0]);

    std::fs::create_dir_all(dir.path().join("features")).unwrap();
    for id in ["a", "b"] {
        std::fs::write(
            dir.path().join(format!("features/{id}.ften")),
            encode_tensor(&[1, 1, 1], [1.0f32]),
        )
        .unwrap();
    }
    let path = dir.path().join("manifest.csv");
    save_manifest(&m, &path).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.entries, m.entries);
}

#[test]
fn manifest_errors() {
    let base = Path::new("/data");
    let dup = format!("{HEADER}\na,,f.ften,,\na,,g.ften,,\n");
    assert!(matches!(
        parse_manifest(&dup, base),
        Err(Error::DuplicateId { ref id, line: 3 }) if id == "a"
    ));
    let order = "id,features_path,image_path,bu_maps,labels\na,f,,,\n";
    assert!(matches!(parse_manifest(order, base), Err(Error::Parse { line: 1, .. })));
    let extra = format!("{HEADER},notes\na,,f,,,x\n");
    assert!(matches!(parse_manifest(&extra, base), Err(Error::Parse { line: 1, .. })));
    let no_feat = format!("{HEADER}\na,,,,\n");
    assert!(matches!(parse_manifest(&no_feat, base), Err(Error::Parse { .. })));
    let bad_box = format!("{HEADER},gt_boxes\na,,f,,cat,cat:1:2:0:4\n");
    assert!(matches!(parse_manifest(&bad_box, base), Err(Error::Parse { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, format!("{HEADER}\na,,missing.ften,,\n")).unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(err.to_string().contains("missing.ften"), "{err}");
}

fn bundle() -> ModelBundle {
    let model = |w: Vec<f64>, b| LinearModel { weights: w, bias: b };
    ModelBundle::new(
        vec![1, 2],
        2,
        10,
        vec![
            CategoryModel {
                name: "cat".into(),
                image: model((0..10).map(|i| i as f64 * 0.25).collect(), -0.5),
                feature: model(vec![1.5, -2.0], 0.125),
            },
            CategoryModel {
                name: "dog".into(),
                image: model(vec![0.1; 10], 0.0),
                feature: model(vec![-1.0, 3.0], -7.0),
            },
        ],
    )
    .unwrap()
}

#[test]
fn bundle_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle();
    let p = dir.path().join("m.bspp");
    b.save(&p).unwrap();
    let back = ModelBundle::load(&p).unwrap();
    assert_eq!(back.encode(), b.encode());
    assert_eq!(back.category_names(), vec!["cat", "dog"]);
    assert!(matches!(back.index_of("bird"), Err(Error::UnknownCategory(_))));

    let bytes = b.encode();
    assert!(matches!(ModelBundle::decode(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(ModelBundle::decode(&trailing).is_err());
    let mut magic = bytes;
    magic[0] = b'Z';
    assert!(matches!(ModelBundle::decode(&magic), Err(Error::BadMagic { .. })));
}
