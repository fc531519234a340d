//! The archive backend reads descriptor tensors written by an external
//! exporter. Exporting oracle descriptors to files must reproduce the
//! oracle-backend estimates.

use zeropose::bop_eval::{load_bop_scene, read_results_csv, scene_dir};
use zeropose::descriptors::{oracle_descriptors, pool_global, DescriptorGrid, Tensor, ORACLE_DIM};
use zeropose::geometry::rotation_angle_between;
use zeropose::pipeline::{self, coord_map_from_tensor, coord_path, oracle_query, query_descriptor_stem, DescriptorBackend, PipelineConfig};
use zeropose::raster::read_mask_png;
use zeropose::render::{object_store_dir, TemplateStore};
use zeropose::synthetic::{write_synthetic_dataset, SyntheticDatasetSpec};

#[test]
fn exported_oracle_descriptors_match_oracle_backend() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    write_synthetic_dataset(&ds, &SyntheticDatasetSpec { images: 4, ..Default::default() }).unwrap();
    let base = PipelineConfig {
        template_count: 60,
        dataset: Some(ds.clone()),
        store: Some(dir.path().join("store")),
        ..Default::default()
    };
    pipeline::render_templates_for_dataset(&base).unwrap();

    for obj in [1u32, 2] {
        let odir = object_store_dir(base.store.as_ref().unwrap(), obj);
        let store = TemplateStore::load(&odir).unwrap();
        for r in &store.records {
            let grid = oracle_descriptors(&r.render_output(store.frame).coord_map, 8, 8, ORACLE_DIM).unwrap();
            grid.write(odir.join(format!("view_{:04}.local.zst6", r.index))).unwrap();
            pool_global(&grid).unwrap().write(odir.join(format!("view_{:04}.global.zst6", r.index))).unwrap();
        }
    }
    let split = ds.join("test");
    let sdir = scene_dir(&split, 1);
    for a in load_bop_scene(&split, 1).unwrap() {
        for (i, g) in a.gt.iter().enumerate() {
            let coord = coord_map_from_tensor(&Tensor::read(coord_path(&sdir, a.image_id, i)).unwrap()).unwrap();
            let mask = read_mask_png(&g.mask_path).unwrap();
            let q = oracle_query(&coord, &mask, 1.2, 224, 8, 8).unwrap();
            let stem = query_descriptor_stem(&sdir, a.image_id, i);
            std::fs::create_dir_all(stem.parent().unwrap()).unwrap();
            q.grid.write(format!("{}.local.zst6", stem.display())).unwrap();
            q.global.write(format!("{}.global.zst6", stem.display())).unwrap();
            let back = DescriptorGrid::read(format!("{}.local.zst6", stem.display())).unwrap();
            assert_eq!(back, q.grid);
        }
    }

    let oracle_csv = dir.path().join("oracle.csv");
    let archive_csv = dir.path().join("archive.csv");
    pipeline::estimate(&PipelineConfig { results: Some(oracle_csv.clone()), ..base.clone() }).unwrap();
    let s = pipeline::estimate(&PipelineConfig {
        results: Some(archive_csv.clone()),
        descriptor_backend: DescriptorBackend::Archive,
        ..base.clone()
    })
    .unwrap();
    assert_eq!(s.estimates, 8);
    let a = read_results_csv(&oracle_csv).unwrap();
    let b = read_results_csv(&archive_csv).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.scene_id, x.im_id, x.obj_id), (y.scene_id, y.im_id, y.obj_id));
        assert!(rotation_angle_between(&x.pose, &y.pose).to_degrees() < 1.0);
        assert!((x.pose.translation() - y.pose.translation()).norm() < 5.0);
    }
}

#[test]
fn archive_backend_without_files_reports_descriptor_stage() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    write_synthetic_dataset(&ds, &SyntheticDatasetSpec { images: 1, ..Default::default() }).unwrap();
    let cfg = PipelineConfig {
        template_count: 12,
        dataset: Some(ds),
        store: Some(dir.path().join("store")),
        results: Some(dir.path().join("r.csv")),
        descriptor_backend: DescriptorBackend::Archive,
        ..Default::default()
    };
    pipeline::render_templates_for_dataset(&cfg).unwrap();
    let s = pipeline::estimate(&cfg).unwrap();
    assert_eq!((s.estimates, s.failures), (0, 2));
    let diags: Vec<pipeline::Diagnostic> =
        serde_json::from_slice(&std::fs::read(dir.path().join("r.diagnostics.json")).unwrap()).unwrap();
    assert!(diags.iter().all(|d| d.stage == "descriptors"));
}
