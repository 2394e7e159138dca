//! Dataset plumbing: the two-file citation format, the binary bundle
//! format, synthetic community graphs, and split construction.

use alignahead::graph::{
    generate_sbm, load_bundle, load_content_cites, planetoid_split, save_bundle, Labels,
    SbmParams, SplitTag,
};

fn count(split: &[SplitTag], tag: SplitTag) -> usize {
    split.iter().filter(|&&t| t == tag).count()
}

fn main() {
    let dir = std::env::temp_dir().join("alignahead_datasets_example");
    std::fs::create_dir_all(&dir).unwrap();

    // A miniature citation dataset in the classic content/cites layout.
    let content = "\
paper_a\t1\t0\t1\tml
paper_b\t0\t1\t1\tml
paper_c\t1\t1\t0\tdb
paper_d\t0\t0\t1\tdb
paper_e\t1\t0\t0\tir
";
    let cites = "\
paper_a\tpaper_b
paper_b\tpaper_c
paper_c\tpaper_d
paper_d\tpaper_e
paper_e\tpaper_a
paper_a\tpaper_a
paper_x\tpaper_b
";
    let content_path = dir.join("mini.content");
    let cites_path = dir.join("mini.cites");
    std::fs::write(&content_path, content).unwrap();
    std::fs::write(&cites_path, cites).unwrap();

    let (mut graph, report) = load_content_cites(&content_path, &cites_path).unwrap();
    println!(
        "content/cites: {} nodes, {} features, {} classes, {} edges",
        graph.num_nodes(),
        graph.num_features,
        graph.num_classes,
        graph.edges.len()
    );
    println!(
        "  dropped {} self-loops, {} duplicate edges, {} lines citing unknown ids",
        report.dropped_self_loops, report.dropped_duplicates, report.dropped_unknown
    );
    if let Labels::Single(ys) = &graph.labels {
        println!("  labels (classes sorted by name): {ys:?}");
    }

    planetoid_split(&mut graph, 1, 1, 1, 0).unwrap();
    println!(
        "  planetoid-style split: {} train / {} val / {} test / {} unused",
        count(&graph.split, SplitTag::Train),
        count(&graph.split, SplitTag::Val),
        count(&graph.split, SplitTag::Test),
        count(&graph.split, SplitTag::None),
    );

    // The bundle format round-trips any graph, including multi-label ones.
    let bundle_dir = dir.join("mini_bundle");
    save_bundle(&graph, &bundle_dir).unwrap();
    let reloaded = load_bundle(&bundle_dir).unwrap();
    let same = reloaded.num_nodes() == graph.num_nodes()
        && reloaded.edges == graph.edges
        && reloaded.split == graph.split
        && reloaded.features.max_abs_diff(&graph.features) == 0.0;
    println!("\nbundle round trip ({}): intact = {same}", bundle_dir.display());

    let sbm = generate_sbm(&SbmParams {
        block_sizes: vec![30, 30, 40],
        p_in: 0.2,
        p_out: 0.01,
        num_features: 8,
        noise: 0.2,
        seed: 42,
    });
    println!(
        "\nstochastic block model: {} nodes in 3 communities, {} edges",
        sbm.num_nodes(),
        sbm.edges.len()
    );
    let within = sbm
        .edges
        .iter()
        .filter(|&&(u, v)| {
            let block = |n: usize| if n < 30 { 0 } else if n < 60 { 1 } else { 2 };
            block(u) == block(v)
        })
        .count();
    println!("  {within} within-community, {} across", sbm.edges.len() - within);
}
