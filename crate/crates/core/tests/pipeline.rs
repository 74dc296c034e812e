//! Library-level pipeline: manifests and descriptor files through
//! clustering, augmentation planning and execution, perturbation, prompt
//! building and embedding evaluation, checking the contracts each stage
//! hands to the next.

use std::collections::BTreeMap;
use std::path::Path;

use habitat_forge_core::augment::{self, Strategy};
use habitat_forge_core::composite::{BinaryMask, DiffusionInpainter, RasterImage};
use habitat_forge_core::corpus::{DatasetManifest, DescriptorKind, DescriptorSet};
use habitat_forge_core::perturb::{build_suite, PerturbOptions, PerturbationKind};
use habitat_forge_core::prompt::{build_ensembles, ensemble_records, MissingHabitatPolicy};
use habitat_forge_core::textcluster::build_habitat_groups;
use habitat_forge_core::zseval::{evaluate, ClassifierEnsemble, EmbeddingMatrix};

const BIRDS: [(&str, &str); 6] = [
    ("Cactus Wren", "deserts arid foothills cactus scrub"),
    ("Sage Thrasher", "deserts sagebrush scrub arid flats"),
    ("Seaside Sparrow", "salt marshes brackish tidal reeds"),
    ("Black Tern", "freshwater marshes bogs reeds wetlands"),
    ("Heermann Gull", "rocky islands ocean coast offshore"),
    ("Elegant Tern", "beaches sandy islands shore ocean"),
];

fn write_workspace(root: &Path) -> DatasetManifest {
    let mut text = String::from("#dataset itest\n#split train\n");
    for (c, (name, _)) in BIRDS.iter().enumerate() {
        text.push_str(&format!("#class {c} {name}\n"));
    }
    for (c, _) in BIRDS.iter().enumerate() {
        for i in 0..2 {
            let mut img = RasterImage::filled(10, 10, [30 + 10 * c as u8, 80, 120]);
            let mut mask = BinaryMask::filled(10, 10, 0);
            for y in 3..7 {
                for x in 3..7 {
                    img.set_pixel(x, y, [220, 40 + 10 * c as u8, 60]);
                    mask.set(x, y, 1);
                }
            }
            img.save(&root.join(format!("img_{c}_{i}.png"))).unwrap();
            mask.save(&root.join(format!("mask_{c}_{i}.png"))).unwrap();
            text.push_str(&format!(
                "img_{c}_{i}.png\t{c}\tmask_{c}_{i}.png\t2,2,6,6\n"
            ));
        }
    }
    DatasetManifest::parse(&text).unwrap()
}

fn habitat_set() -> DescriptorSet {
    let mut tsv = String::from("#kind HABITAT\n");
    for (name, habitat) in BIRDS {
        tsv.push_str(&format!("{name}\t\t\t{habitat}\n"));
    }
    DescriptorSet::parse(&tsv, DescriptorKind::Habitat).unwrap()
}

#[test]
fn modules_compose_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_workspace(dir.path());

    // Habitat groups from the textual descriptions.
    let habitat = habitat_set();
    assert!(habitat.validate_against(&manifest).unwrap().is_empty());
    let groups = build_habitat_groups::<f64>(&habitat, 2, 5, 99).unwrap();
    let covered: usize = groups.groups.iter().map(Vec::len).sum();
    assert_eq!(covered, BIRDS.len());

    // Mixed-G plan against those groups, executed to a blended tree.
    let plan = augment::plan(&manifest, Strategy::MixedG, Some(&groups), 7, 1).unwrap();
    augment::validate_plan(&plan, &manifest, Some(&groups)).unwrap();
    let blended = augment::execute(
        &plan,
        &manifest,
        dir.path(),
        &dir.path().join("aug"),
        &augment::ExecuteOptions {
            canvas: (10, 10),
            inpaint_iterations: 2,
        },
    )
    .unwrap();
    assert_eq!(
        blended.instances.len(),
        manifest.instances.len() + plan.pairings.len()
    );
    blended.validate().unwrap();
    // Every augmented instance is loadable with a matching mask.
    for instance in &blended.instances[manifest.instances.len()..] {
        let (img, mask) =
            habitat_forge_core::corpus::load_instance_rasters(dir.path(), instance).unwrap();
        let mask = mask.expect("augmented instances carry masks");
        assert_eq!((img.width, img.height), (mask.width, mask.height));
    }

    // Perturbation suite over the same manifest.
    let (suite, report) = build_suite(
        &manifest,
        dir.path(),
        &PerturbationKind::ALL,
        &dir.path().join("perturb"),
        &PerturbOptions {
            seed: 5,
            ..Default::default()
        },
        &DiffusionInpainter::default(),
    )
    .unwrap();
    assert_eq!(suite.len(), 5);
    assert!(report.skipped.is_empty());
    for m in suite.values() {
        assert_eq!(m.instances.len(), manifest.instances.len());
    }

    // Prompts for every class, visual + habitat.
    let mut visual_tsv = String::from("#kind MV\n");
    for (name, _) in BIRDS {
        visual_tsv.push_str(&format!("{name}\t\thas\ta distinctive plumage\n"));
    }
    let visual = DescriptorSet::parse(&visual_tsv, DescriptorKind::MV).unwrap();
    let classes: Vec<String> = manifest
        .classes
        .iter()
        .map(|c| c.common_name.clone())
        .collect();
    let ensembles = build_ensembles(
        &classes,
        &visual,
        Some(&habitat),
        MissingHabitatPolicy::Error,
    )
    .unwrap();
    let records = ensemble_records(&ensembles);
    assert_eq!(records.len(), BIRDS.len() * 2);

    // A stand-in encoder that keeps classes separable by construction:
    // each prompt embedding leans on its class axis with a small
    // prompt-dependent perturbation. Class-axis probes must then score 1.0.
    let dims = BIRDS.len() + 2;
    let class_index: BTreeMap<&str, usize> = manifest
        .classes
        .iter()
        .map(|c| (c.common_name.as_str(), c.index))
        .collect();
    let embed = |class: &str, prompt: &str| -> Vec<f64> {
        let mut v = vec![0.0f64; dims];
        v[class_index[class]] = 1.0;
        let mut h = 0u64;
        for b in prompt.bytes() {
            h = h.wrapping_mul(31).wrapping_add(u64::from(b));
        }
        v[BIRDS.len() + (h % 2) as usize] = 0.05;
        v
    };
    let text_rows: Vec<f64> = records
        .iter()
        .flat_map(|r| embed(&r.class, &r.prompt))
        .collect();
    let text_ids: Vec<String> = (0..records.len()).map(|i| format!("p{i}")).collect();
    let text_emb = EmbeddingMatrix::new(dims, text_rows, text_ids).unwrap();
    let row_classes: Vec<String> = records.iter().map(|r| r.class.clone()).collect();
    let ensemble = ClassifierEnsemble::from_text_embeddings(&text_emb, &row_classes).unwrap();

    let mut image_data = Vec::new();
    let mut image_ids = Vec::new();
    let mut labels = BTreeMap::new();
    for class in &ensemble.classes {
        let mut probe = vec![0.0f64; dims];
        probe[class_index[class.as_str()]] = 1.0;
        image_ids.push(format!("probe_{class}"));
        labels.insert(format!("probe_{class}"), class.clone());
        image_data.extend_from_slice(&probe);
    }
    let images = EmbeddingMatrix::new(dims, image_data, image_ids).unwrap();
    let eval_report = evaluate(&images, &labels, &ensemble, "itest").unwrap();
    assert_eq!(eval_report.top1(), 1.0);
}
