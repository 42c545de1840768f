//! Atomic file output: write to a temporary sibling, then rename over the
//! destination, so readers never observe a truncated file.

use std::io::{self, Write};
use std::path::Path;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    write_atomic_with(path, |w| w.write_all(bytes))
}

pub fn write_atomic_with<F>(path: &Path, fill: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn save_rgb_png(path: &Path, img: &image::RgbImage) -> io::Result<()> {
    write_atomic(path, &encode_png(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)?)
}

pub fn save_gray_png(path: &Path, img: &image::GrayImage) -> io::Result<()> {
    write_atomic(path, &encode_png(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)?)
}

pub fn encode_png(
    raw: &[u8],
    width: u32,
    height: u32,
    color: image::ExtendedColorType,
) -> io::Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width, height, color)
        .map_err(io::Error::other)?;
    Ok(out)
}
