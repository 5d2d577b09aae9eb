//! The checked-in corpus must be reproducible byte for byte.

use std::path::PathBuf;

use weylscope::corpus::{generate, random_metric, render_spec, standard_corpus, GeneratorSpec};
use weylscope::metric::parse_metric;
use weylscope::sample::Sampler;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

#[test]
fn checked_in_corpus_matches_generators() {
    for (name, spec) in standard_corpus() {
        let path = corpus_dir().join(name);
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(on_disk, render_spec(&spec).unwrap(), "{name} drifted from its generator");
    }
}

#[test]
fn corpus_headers_record_their_recipe() {
    for (name, spec) in standard_corpus() {
        let text = render_spec(&spec).unwrap();
        let spec_line = text.lines().find_map(|l| l.strip_prefix("# spec ")).unwrap();
        let back: GeneratorSpec = serde_json::from_str(spec_line).unwrap();
        assert_eq!(back, spec, "{name}");
        assert!(text.contains(&format!("# hash {}", spec.hash8())));
    }
}

#[test]
fn rendered_metrics_evaluate_identically() {
    let mut defs: Vec<_> = standard_corpus().into_iter().map(|(_, s)| generate(&s).unwrap()).collect();
    defs.push(random_metric(5, 3));
    for def in defs {
        let again = parse_metric(&def.render()).unwrap();
        let sampler = Sampler::for_metric(&def, 1).with_margin(0.05);
        for i in 0..3 {
            let p = sampler.point(i);
            assert_eq!(def.values_at(&p).unwrap(), again.values_at(&p).unwrap(), "{}", def.name);
        }
    }
}
