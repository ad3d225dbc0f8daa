use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modal_arc::render::{decode_png, render_png};
use modal_arc::{
    decode_image, encode_grid_text, parse_grid_text, parse_matrix_answer, render_grid, Mode,
    Pipeline, PipelineConfig, RenderConfig, ScriptedBackend, TemplateSet,
};
use modal_arc_bench::{pattern_grid, pattern_task};
use std::hint::black_box;

const SIDES: [usize; 3] = [3, 10, 30];

fn text_codec(c: &mut Criterion) {
    let mut group = c.benchmark_group("text");
    for side in SIDES {
        let g = pattern_grid(side, side);
        let text = encode_grid_text(&g);
        group.bench_with_input(BenchmarkId::new("encode", side), &g, |b, g| {
            b.iter(|| encode_grid_text(black_box(g)))
        });
        group.bench_with_input(BenchmarkId::new("parse", side), &text, |b, t| {
            b.iter(|| parse_grid_text(black_box(t)).unwrap())
        });
        let reply = format!("The rule says recolor.\n\\boxed{{{text}}}");
        group.bench_with_input(BenchmarkId::new("extract", side), &reply, |b, r| {
            b.iter(|| parse_matrix_answer(black_box(r)).unwrap())
        });
    }
    group.finish();
}

fn image_codec(c: &mut Criterion) {
    let cfg = RenderConfig::default();
    let mut group = c.benchmark_group("image");
    for side in SIDES {
        let g = pattern_grid(side, side);
        let img = render_grid(&g, &cfg);
        let png = render_png(&g, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("render", side), &g, |b, g| {
            b.iter(|| render_grid(black_box(g), &cfg))
        });
        group.bench_with_input(BenchmarkId::new("decode", side), &img, |b, img| {
            b.iter(|| decode_image(black_box(img), &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("png_round_trip", side), &png, |b, png| {
            b.iter(|| decode_image(&decode_png(black_box(png)).unwrap(), &cfg).unwrap())
        });
    }
    group.finish();
}

fn scripted_pipeline(c: &mut Criterion) {
    let task = pattern_task(3, 10);
    let pipeline = Pipeline::new(TemplateSet::builtin(), PipelineConfig::for_mode(Mode::VlsrMssc)).unwrap();
    c.bench_function("pipeline/vlsr_mssc_three_rounds", |b| {
        b.iter(|| {
            let backend = ScriptedBackend::from_fn(|req| {
                Ok(if req.request_tag.ends_with("summarize") {
                    "\\boxed{Recolor every cell.}".into()
                } else if req.request_tag.contains("/verify/") {
                    "\\boxed{False}".into()
                } else {
                    "\\boxed{[[1, 2], [3, 4]]}".into()
                })
            });
            pipeline.run(&task.redacted(), &backend)
        })
    });
}

criterion_group!(benches, text_codec, image_codec, scripted_pipeline);
criterion_main!(benches);
