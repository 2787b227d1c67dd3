use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tdsal::ModelBundle;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Small rendered two-category dataset with a trained bundle.
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        f.ok(&[
            "synth", "--out", &f.s("data"), "--grid", "8", "--positives", "5", "--negatives", "5",
            "--render", "--categories", "cat,dog",
        ]);
        f.ok(&["train", "--manifest", &f.s("data/manifest.csv"), "--bundle", &f.s("model.bspp")]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_str().unwrap().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tdsal"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn with_model(&self, cmd: &str, out: &str, extra: &[&str]) -> String {
        let (m, b, o) = (self.s("data/manifest.csv"), self.s("model.bspp"), self.s(out));
        let mut args = vec![cmd, "--manifest", &m, "--bundle", &b, "--out", &o];
        args.extend_from_slice(extra);
        self.ok(&args)
    }
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(f.run(&["--help"]).status.code(), Some(0));
    assert_eq!(f.run(&["frobnicate"]).status.code(), Some(2));
    let m = f.s("data/manifest.csv");
    assert_eq!(f.run(&["eval", "--manifest", &m, "--mode", "bogus"]).status.code(), Some(2));
    assert_eq!(
        f.run(&["train", "--manifest", &f.s("nope.csv"), "--bundle", &f.s("x.bspp")]).status.code(),
        Some(3)
    );
    let b = f.s("model.bspp");
    let out = f.s("o");
    let o = f.run(&["saliency", "--manifest", &m, "--bundle", &b, "--out", &out, "--categories", "bird"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bird"));
}

#[test]
fn every_subcommand_writes_its_outputs() {
    let f = Fixture::new();
    assert_eq!(
        ModelBundle::load(&f.path("model.bspp")).unwrap().category_names(),
        vec!["cat", "dog"]
    );

    f.with_model("saliency", "sal", &[]);
    assert_eq!(header(&f.path("sal/saliency.csv")), "id,category,score,confidence,selected_bu");
    assert!(f.path("sal/pos_cat_000/ind.pgm").exists());
    assert!(f.path("sal/pos_cat_000/cat.pgm").exists());

    f.with_model("select-bu", "sel", &[]);
    assert_eq!(
        header(&f.path("sel/select_bu.csv")),
        "id,category,candidate,b_hat,b_tilde,mean_mu,objective,selected"
    );

    f.with_model("segment", "seg", &[]);
    assert!(f.path("seg/pos_dog_000/labels.pgm").exists());

    f.with_model("localize", "loc", &[]);
    assert_eq!(header(&f.path("loc/localizations.csv")), "id,category,x,y,score");

    f.with_model("detect", "det", &[]);
    assert_eq!(header(&f.path("det/detections.csv")), "id,category,x,y,w,h,score");

    let expected = [
        ("saliency", "category,images,precision_eer,f_measure"),
        ("segmentation", "category,images,jaccard,iou"),
        ("localization", "category,predictions,exact,pix18,ap_exact,ap_pix18"),
        ("detection", "category,detections,ap"),
    ];
    for (mode, cols) in expected {
        let stdout = f.with_model("eval", "eval", &["--mode", mode]);
        assert_eq!(header(&f.path(&format!("eval/eval_{mode}.csv"))), cols);
        assert!(stdout.contains("mean"), "{mode}: {stdout}");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let f = Fixture::new();
    std::fs::write(
        f.path("run.cfg"),
        "# paths are relative to this file\n\
         manifest = data/manifest.csv\n\
         bundle = model.bspp  # trailing comment\n\
         out = from_cfg\n\
         categories = cat\n",
    )
    .unwrap();
    let cfg = f.s("run.cfg");
    f.ok(&["localize", "--config", &cfg]);
    let text = std::fs::read_to_string(f.path("from_cfg/localizations.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("cat")), "{text}");

    f.ok(&["localize", "--config", &cfg, "--out", &f.s("from_flag"), "--categories", "dog"]);
    let text = std::fs::read_to_string(f.path("from_flag/localizations.csv")).unwrap();
    assert!(text.lines().skip(1).any(|l| l.contains(",dog,")), "{text}");

    std::fs::write(f.path("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(f.run(&["train", "--config", &f.s("bad.cfg")]).status.code(), Some(2));
}

#[test]
fn superpixel_refinement_changes_maps() {
    let f = Fixture::new();
    f.with_model("saliency", "refined", &[]);
    f.with_model("saliency", "raw", &["--no-superpixel"]);
    let a = std::fs::read(f.path("refined/pos_cat_000/cat.pgm")).unwrap();
    let b = std::fs::read(f.path("raw/pos_cat_000/cat.pgm")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn training_without_negatives_names_the_category() {
    let f = Fixture::new();
    let text = std::fs::read_to_string(f.path("data/manifest.csv")).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.starts_with("pos_cat"))
        .map(|(_, l)| l)
        .collect();
    std::fs::write(f.path("data/only_cat.csv"), kept.join("\n") + "\n").unwrap();
    let o = f.run(&[
        "train", "--manifest", &f.s("data/only_cat.csv"), "--bundle", &f.s("x.bspp"),
        "--categories", "cat",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cat"));
    assert!(!f.path("x.bspp").exists());
}
