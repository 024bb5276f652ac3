use std::io::Write;

use ocrbench::tiler::{apply_rotation, plan_layout, write_crops, PageGeometry, TileLayout};

use crate::{data, CliError, CliResult, TileArgs};

fn print_layout(page: PageGeometry, layout: &TileLayout, out: &mut dyn Write) -> CliResult {
    let global = if layout.includes_global { " + global" } else { "" };
    writeln!(out, "page {}x{}", page.width, page.height).map_err(data)?;
    writeln!(out, "grid {}x{} (rows x cols)", layout.rows, layout.cols).map_err(data)?;
    writeln!(out, "tile_side {}", layout.tile_side).map_err(data)?;
    writeln!(out, "canvas {}x{}", layout.resized_width, layout.resized_height).map_err(data)?;
    writeln!(out, "tiles {}{global}", layout.tile_count()).map_err(data)?;
    for (i, c) in layout.crops.iter().enumerate() {
        let (r, col) = (i as u32 / layout.cols, i as u32 % layout.cols);
        writeln!(out, "crop {r}_{col} x={} y={} w={} h={}", c.x, c.y, c.width, c.height).map_err(data)?;
    }
    Ok(())
}

pub fn cmd_tile(args: &TileArgs, out: &mut dyn Write) -> CliResult {
    let usage = |e: ocrbench::tiler::TileError| CliError::Usage(e.to_string());
    match &args.image {
        Some(image) => {
            let dir = args.out.as_ref().expect("clap requires --out with --image");
            let (mut layout, written) =
                write_crops(image, args.tile_side, args.max_tiles, args.rotate, dir).map_err(data)?;
            if args.no_global {
                let global = dir.join("global.png");
                std::fs::remove_file(&global).map_err(data)?;
                layout = layout.without_global();
            }
            let (w, h) = image::image_dimensions(image).map_err(data)?;
            let page = apply_rotation(PageGeometry::new(w, h).map_err(data)?, args.rotate);
            print_layout(page, &layout, out)?;
            for p in written.iter().filter(|p| !(args.no_global && p.ends_with("global.png"))) {
                writeln!(out, "wrote {}", p.display()).map_err(data)?;
            }
            Ok(())
        }
        None => {
            let (w, h) = (args.width.expect("clap"), args.height.expect("clap"));
            let page = apply_rotation(PageGeometry::new(w, h).map_err(usage)?, args.rotate);
            let mut layout = plan_layout(page, args.tile_side, args.max_tiles).map_err(usage)?;
            if args.no_global {
                layout = layout.without_global();
            }
            print_layout(page, &layout, out)
        }
    }
}
