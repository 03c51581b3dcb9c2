use mtgan::data::{tensor_depth_mm, tensor_image, Dataset, Image, Rgb8};
use mtgan::eval::{predict_depth, predict_semantic};
use mtgan::train::TrainerState;
use mtgan::{Result, Tensor};

/// Rows of input RGB, generated semantic image and generated dense depth
/// (grey, near is dark) for the first `rows` samples.
pub fn sample_grid(state: &TrainerState, data: &Dataset, rows: usize) -> Result<Rgb8> {
    let n = rows.min(data.len());
    let (w, h) = (data.manifest.width, data.manifest.height);
    let dmax = data.manifest.dmax_mm;
    let pick = |f: fn(&mtgan::data::SampleTensors) -> &Tensor| {
        Tensor::stack(&data.tensors[..n].iter().map(|t| f(t).clone()).collect::<Vec<_>>())
    };
    let rgb = pick(|t| &t.rgb)?;
    let sparse = pick(|t| &t.sparse)?;
    let gs = &state.semantic.gs.params;
    let semantic = predict_semantic(gs, &rgb)?;
    let dense = predict_depth(gs, &state.depth.gd.params, &rgb, &sparse, state.config.use_semantic_input)?;

    let mut grid = Image::new(3 * w, n * h, 3);
    for i in 0..n {
        let depth = tensor_depth_mm(&dense, i, dmax)?;
        let grey: Vec<u8> = depth
            .iter()
            .flat_map(|&mm| {
                let v = (mm / dmax * 255.0).round().clamp(0.0, 255.0) as u8;
                [v, v, v]
            })
            .collect();
        let tiles = [
            data.samples[i].rgb.clone(),
            tensor_image(&semantic, i)?,
            Image::from_data(w, h, 3, grey)?,
        ];
        for (col, tile) in tiles.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    grid.pixel_mut(col * w + x, i * h + y).copy_from_slice(tile.pixel(x, y));
                }
            }
        }
    }
    Ok(grid)
}
