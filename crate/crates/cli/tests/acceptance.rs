//! Acceptance: end-to-end determinism of the full demo pipeline.
//!
//! The pipeline (ingest -> cluster -> augment mixed-g -> perturb all ->
//! flybird -> prompts -> eval -> compare -> report) runs twice from one
//! config; the output trees must hash identically. The external text/image
//! encoder is played by a deterministic pseudo-embedder over prompt text.
//!
//! `cargo test -p habitat-forge --test acceptance -- --nocapture`

use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};

use habitat_forge_core::composite::{BinaryMask, RasterImage};
use habitat_forge_core::prompt::read_prompt_file;
use habitat_forge_core::treehash::hash_tree;
use habitat_forge_core::zseval::EmbeddingMatrix;

const DIMS: usize = 16;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_habitat-forge"))
}

fn run_ok(args: &[&str]) {
    let output = bin().args(args).output().expect("spawn habitat-forge");
    assert!(
        output.status.success(),
        "habitat-forge {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Deterministic stand-in for the external encoder: expand SHA-256 of the
/// text into `DIMS` floats in [-1, 1].
fn pseudo_embedding(text: &str) -> Vec<f64> {
    let mut out = Vec::with_capacity(DIMS);
    let mut counter = 0u32;
    while out.len() < DIMS {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(counter.to_le_bytes());
        for chunk in hasher.finalize().chunks_exact(4) {
            if out.len() == DIMS {
                break;
            }
            let v = u32::from_le_bytes(chunk.try_into().unwrap());
            out.push((f64::from(v) / f64::from(u32::MAX)) * 2.0 - 1.0);
        }
        counter += 1;
    }
    out
}

fn write_embeddings(path: &Path, rows: &[(String, Vec<f64>)]) {
    let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
    let data: Vec<f64> = rows.iter().flat_map(|(_, v)| v.clone()).collect();
    EmbeddingMatrix::new(DIMS, data, ids)
        .unwrap()
        .write(path)
        .unwrap();
}

/// Embed every prompt of a prompt file, rows parallel to the records.
fn embed_prompt_file(prompt_path: &Path, out_path: &Path) {
    let records = read_prompt_file(&std::fs::read_to_string(prompt_path).unwrap()).unwrap();
    let rows: Vec<(String, Vec<f64>)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("p{i}"), pseudo_embedding(&r.prompt)))
        .collect();
    write_embeddings(out_path, &rows);
}

const CLASSES: [(&str, &str, &str); 5] = [
    // (common name, habitat text, visual text)
    (
        "Cactus Wren",
        "deserts arid foothills cactus scrub thorny",
        "a speckled throat and a long bill",
    ),
    (
        "Desert Thrasher",
        "deserts cactus scrub arid thorny washes",
        "a curved bill and dusty plumage",
    ),
    (
        "Seaside Sparrow",
        "salt marshes brackish reeds tidal wetland",
        "a gray streaked back",
    ),
    (
        "Black Tern",
        "freshwater marshes bogs wetland reeds lagoons",
        "a dark body and buoyant flight",
    ),
    (
        "Heermann Gull",
        "rocky islands ocean coast surf offshore",
        "a red bill with a black tip",
    ),
];

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Lay down everything the pipeline consumes: images, masks, panoptic
    /// maps, manifests, descriptor files, rule, labels, embeddings, config.
    fn create(root: &Path) -> Self {
        std::fs::create_dir_all(root.join("imgs")).unwrap();
        std::fs::create_dir_all(root.join("emb")).unwrap();

        // Train: 2 images per class, with masks. Test: 1 image per class,
        // with masks, bboxes and panoptic maps (sky on classes 3 and 4).
        let mut train = String::from("#dataset demo\n#split train\n");
        let mut test = String::from("#dataset demo\n#split test\n");
        for (c, (name, _, _)) in CLASSES.iter().enumerate() {
            train.push_str(&format!("#class {c} {name}\n"));
            test.push_str(&format!("#class {c} {name}\n"));
        }
        for (c, _) in CLASSES.iter().enumerate() {
            for i in 0..2 {
                let stem = format!("imgs/train_{c}_{i}");
                write_fixture_image(root, &stem, c as u8, i as u8);
                train.push_str(&format!("{stem}.png\t{c}\t{stem}.mask.png\n"));
            }
            let stem = format!("imgs/test_{c}");
            write_fixture_image(root, &stem, c as u8, 9);
            let sky = c >= 3;
            write_panoptic_map(root, &stem, sky);
            test.push_str(&format!(
                "{stem}.png\t{c}\t{stem}.mask.png\t3,3,6,6\t{stem}.pan.png\n"
            ));
        }
        std::fs::write(root.join("train.manifest"), train).unwrap();
        std::fs::write(root.join("test.manifest"), test).unwrap();

        let mut habitat = String::from("#kind HABITAT\n");
        let mut visual = String::from("#kind MV\n");
        for (name, habitat_text, visual_text) in CLASSES {
            habitat.push_str(&format!("{name}\t\t\t{habitat_text}\n"));
            visual.push_str(&format!("{name}\t\thas\t{visual_text}\n"));
        }
        std::fs::write(root.join("habitat.tsv"), habitat).unwrap();
        std::fs::write(root.join("mv.tsv"), visual).unwrap();

        std::fs::write(root.join("rule.toml"), "sky_ids = [1]\nground_ids = [2]\n").unwrap();

        // Labels and embeddings for the evaluation stage.
        let mut labels = String::new();
        let mut image_rows = Vec::new();
        for (c, (name, _, _)) in CLASSES.iter().enumerate() {
            let id = format!("imgs/test_{c}.png");
            labels.push_str(&format!("{id}\t{name}\n"));
            image_rows.push((id.clone(), pseudo_embedding(&format!("image:{id}"))));
        }
        std::fs::write(root.join("labels.tsv"), labels).unwrap();
        write_embeddings(&root.join("emb/images.emb"), &image_rows);

        // Support embeddings (few-shot): the train images.
        let mut support_labels = String::new();
        let mut support_rows = Vec::new();
        for (c, (name, _, _)) in CLASSES.iter().enumerate() {
            for i in 0..2 {
                let id = format!("imgs/train_{c}_{i}.png");
                support_labels.push_str(&format!("{id}\t{name}\n"));
                support_rows.push((id.clone(), pseudo_embedding(&format!("image:{id}"))));
            }
        }
        std::fs::write(root.join("support_labels.tsv"), support_labels).unwrap();
        write_embeddings(&root.join("emb/support.emb"), &support_rows);

        let config = format!(
            r#"seed = 4242
jobs = 2

[ingest]
manifest = "{r}/train.manifest"
habitat = "{r}/habitat.tsv"
out = "{r}/out/train.canonical"

[cluster]
habitat = "{r}/habitat.tsv"
k_min = 2
k_max = 4
out = "{r}/out/groups.txt"

[augment]
manifest = "{r}/train.manifest"
strategy = "mixed-g"
groups = "{r}/out/groups.txt"
out = "{r}/out/aug"
root = "{r}"
canvas = 8
inpaint_iters = 2

[perturb]
manifest = "{r}/test.manifest"
out = "{r}/out/perturb"
root = "{r}"

[flybird]
manifest = "{r}/test.manifest"
rule = "{r}/rule.toml"
out = "{r}/out/flybird"
root = "{r}"

[prompts]
manifest = "{r}/test.manifest"
visual = "{r}/mv.tsv"
visual_kind = "mv"
habitat = "{r}/habitat.tsv"
out = "{r}/out/prompts_habitat.tsv"

[eval]
images = "{r}/emb/images.emb"
prompts = "{r}/out/prompts_habitat.tsv"
text_embeddings = "{r}/emb/text_habitat.emb"
labels = "{r}/labels.tsv"
report = "{r}/out/report_habitat.txt"

[compare]
a = "{r}/out/report_visual.txt"
b = "{r}/out/report_habitat.txt"
top = 5
groups = "{r}/out/groups.txt"
out = "{r}/out/compare.txt"

[report]
reports = ["{r}/out/report_visual.txt", "{r}/out/report_habitat.txt"]
labels = ["visual", "visual+habitat"]
layout = "table3"
out = "{r}/out/table.txt"
"#,
            r = root.display()
        );
        std::fs::write(root.join("config.toml"), config).unwrap();

        Self {
            root: root.to_path_buf(),
        }
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }

    /// Run the full pipeline once; everything lands under `out/`.
    fn run_pipeline(&self) {
        let config = self.path("config.toml");
        std::fs::create_dir_all(self.root.join("out")).unwrap();

        run_ok(&["--config", &config, "ingest"]);
        run_ok(&["--config", &config, "cluster"]);
        run_ok(&["--config", &config, "augment"]);
        run_ok(&["--config", &config, "perturb"]);
        run_ok(&["--config", &config, "flybird"]);

        // Visual-only prompts run on plain flags, no config.
        run_ok(&[
            "prompts",
            "--manifest",
            &self.path("test.manifest"),
            "--visual",
            &self.path("mv.tsv"),
            "--visual-kind",
            "mv",
            "--out",
            &self.path("out/prompts_visual.tsv"),
        ]);
        // Habitat-augmented prompts from the config.
        run_ok(&["--config", &config, "prompts"]);

        // The "external encoder": embed both prompt files.
        embed_prompt_file(
            &self.root.join("out/prompts_visual.tsv"),
            &self.root.join("emb/text_visual.emb"),
        );
        embed_prompt_file(
            &self.root.join("out/prompts_habitat.tsv"),
            &self.root.join("emb/text_habitat.emb"),
        );

        run_ok(&[
            "eval",
            "--images",
            &self.path("emb/images.emb"),
            "--prompts",
            &self.path("out/prompts_visual.tsv"),
            "--text-embeddings",
            &self.path("emb/text_visual.emb"),
            "--labels",
            &self.path("labels.tsv"),
            "--report",
            &self.path("out/report_visual.txt"),
        ]);
        run_ok(&["--config", &config, "eval"]);
        // Few-shot variant on top of the habitat ensemble.
        run_ok(&[
            "--config",
            &config,
            "eval",
            "--report",
            &self.path("out/report_fewshot.txt"),
            "--support",
            &self.path("emb/support.emb"),
            "--support-labels",
            &self.path("support_labels.tsv"),
            "--shots",
            "2",
        ]);

        run_ok(&["--config", &config, "compare"]);
        run_ok(&["--config", &config, "report"]);
    }
}

fn write_fixture_image(root: &Path, stem: &str, class_tag: u8, variant: u8) {
    let w = 12;
    let h = 12;
    let mut img = RasterImage::filled(
        w,
        h,
        [
            40 + class_tag.wrapping_mul(31),
            60 + variant.wrapping_mul(17),
            90,
        ],
    );
    let mut mask = BinaryMask::filled(w, h, 0);
    for y in 4..9 {
        for x in 4..9 {
            img.set_pixel(x, y, [200, 30 + class_tag * 20, 50]);
            mask.set(x, y, 1);
        }
    }
    img.save(&root.join(format!("{stem}.png"))).unwrap();
    mask.save(&root.join(format!("{stem}.mask.png"))).unwrap();
}

fn write_panoptic_map(root: &Path, stem: &str, sky: bool) {
    let labels: Vec<u16> = (0..144)
        .map(|i| {
            if sky && i < 60 {
                1 // sky
            } else if i % 7 == 0 {
                2 // grass
            } else {
                0 // bird/other
            }
        })
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(12, 12, labels).unwrap();
    let map_path = root.join(format!("{stem}.pan.png"));
    img.save(&map_path).unwrap();
    std::fs::write(
        habitat_forge_core::flybird::legend_path_for(&map_path),
        "0\tbird\n1\tsky\n2\tgrass\n",
    )
    .unwrap();
}

/// Criterion 9: the demo pipeline run twice from one config produces
/// identical output-tree content hashes.
#[test]
fn acceptance_9_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::create(dir.path());

    ws.run_pipeline();
    let first = hash_tree(&dir.path().join("out")).unwrap();

    // Sanity: the tree contains every expected artifact.
    for artifact in [
        "train.canonical",
        "groups.txt",
        "aug/manifest.txt",
        "aug/plan.txt",
        "perturb/original/manifest.txt",
        "perturb/big-box/manifest.txt",
        "flybird/flybird.manifest",
        "flybird/stats.txt",
        "prompts_visual.tsv",
        "prompts_habitat.tsv",
        "report_visual.txt",
        "report_habitat.txt",
        "report_fewshot.txt",
        "compare.txt",
        "table.txt",
        "table.txt.json",
    ] {
        assert!(
            dir.path().join("out").join(artifact).exists(),
            "missing {artifact}"
        );
    }

    // The flybird split matches the planted sky maps (classes 3 and 4).
    let fly_manifest =
        std::fs::read_to_string(dir.path().join("out/flybird/flybird.manifest")).unwrap();
    assert!(fly_manifest.contains("imgs/test_3.png"));
    assert!(fly_manifest.contains("imgs/test_4.png"));
    assert!(!fly_manifest.contains("imgs/test_0.png"));

    std::fs::remove_dir_all(dir.path().join("out")).unwrap();
    ws.run_pipeline();
    let second = hash_tree(&dir.path().join("out")).unwrap();

    assert_eq!(first, second, "output tree hash changed between reruns");
    println!("ACCEPTANCE 9 end-to-end-determinism: PASS");
}

/// Reruns of a single stage are byte-identical too (restating the eval
/// determinism contract at the file level).
#[test]
fn eval_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::create(dir.path());
    std::fs::create_dir_all(dir.path().join("out")).unwrap();

    run_ok(&[
        "prompts",
        "--manifest",
        &ws.path("test.manifest"),
        "--visual",
        &ws.path("mv.tsv"),
        "--out",
        &ws.path("out/p.tsv"),
    ]);
    embed_prompt_file(&dir.path().join("out/p.tsv"), &dir.path().join("emb/t.emb"));
    for report in ["out/r1.txt", "out/r2.txt"] {
        run_ok(&[
            "eval",
            "--images",
            &ws.path("emb/images.emb"),
            "--prompts",
            &ws.path("out/p.tsv"),
            "--text-embeddings",
            &ws.path("emb/t.emb"),
            "--labels",
            &ws.path("labels.tsv"),
            "--report",
            &ws.path(report),
        ]);
    }
    let r1 = std::fs::read(dir.path().join("out/r1.txt")).unwrap();
    let r2 = std::fs::read(dir.path().join("out/r2.txt")).unwrap();
    assert_eq!(r1, r2);
}

/// A failing stage exits nonzero with a machine-readable error record.
#[test]
fn failures_emit_machine_readable_error_records() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::create(dir.path());

    // One group holding every class makes Mixed-I impossible.
    let single_group = format!(
        "#habitat-groups\n#chosen-k 1\n#seed 0\n#stoplist-sha256 x\n{}\n",
        CLASSES
            .iter()
            .map(|(name, _, _)| *name)
            .collect::<Vec<_>>()
            .join(" | ")
    );
    std::fs::write(dir.path().join("one_group.txt"), single_group).unwrap();

    let output = bin()
        .args([
            "augment",
            "--manifest",
            &ws.path("train.manifest"),
            "--strategy",
            "mixed-i",
            "--groups",
            &dir.path().join("one_group.txt").display().to_string(),
            "--seed",
            "1",
            "--out",
            &ws.path("out/aug_fail"),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let record: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("stderr is a JSON record");
    assert_eq!(record["stage"], "augment");
    assert!(record["cause"]
        .as_str()
        .unwrap()
        .contains("no eligible mixed-i source"));
}
