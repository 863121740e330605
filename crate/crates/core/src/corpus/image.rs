use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An `H×W×C` image with values in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawImage")]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TryFrom<RawImage> for ImageGrid {
    type Error = Error;
    fn try_from(r: RawImage) -> Result<Self> {
        ImageGrid::new(r.height, r.width, r.channels, r.data)
    }
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dims must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageGrid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        ImageGrid::new(height, width, channels, vec![0.0; height * width * channels])
    }

    /// Parse the nested `H×W×C` array used in inline corpus records.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let height = nested.len();
        let width = nested.first().map_or(0, Vec::len);
        let channels = nested.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(height * width * channels);
        for row in nested {
            if row.len() != width {
                return Err(Error::InvalidArgument("ragged image rows".into()));
            }
            for px in row {
                if px.len() != channels {
                    return Err(Error::InvalidArgument("ragged image channels".into()));
                }
                data.extend_from_slice(px);
            }
        }
        ImageGrid::new(height, width, channels, data)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.data
            .chunks(self.width * self.channels)
            .map(|row| row.chunks(self.channels).map(<[f64]>::to_vec).collect())
            .collect()
    }

    /// Read a binary portable pixmap (P6) or graymap (P5).
    pub fn read_pnm(path: &Path) -> Result<Self> {
        let err = |message: String| Error::Image {
            path: path.to_path_buf(),
            message,
        };
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| err(e.to_string()))?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, raw): (usize, Vec<f64>) = match img {
            image::DynamicImage::ImageLuma8(g) => {
                (1, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
            image::DynamicImage::ImageLuma16(g) => {
                (1, g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
            image::DynamicImage::ImageRgb16(g) => {
                (3, g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
            other => (
                3,
                other.into_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            ),
        };
        ImageGrid::new(height, width, channels, raw).map_err(|e| err(e.to_string()))
    }

    /// Write as P6 (three channels) or P5 (one channel), 8-bit.
    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => {
                return Err(Error::InvalidArgument(format!(
                    "PNM output needs 1 or 3 channels, got {c}"
                )))
            }
        };
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        let subtype = if self.channels == 1 {
            PnmSubtype::Graymap(SampleEncoding::Binary)
        } else {
            PnmSubtype::Pixmap(SampleEncoding::Binary)
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file)).with_subtype(subtype);
        use image::ImageEncoder;
        encoder
            .write_image(&bytes, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Where a record's pixels live.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    /// A P5/P6 file, resolved relative to the corpus file.
    Path(PathBuf),
    Inline(ImageGrid),
}

impl ImageSource {
    pub fn load(&self) -> Result<std::borrow::Cow<'_, ImageGrid>> {
        match self {
            ImageSource::Inline(g) => Ok(std::borrow::Cow::Borrowed(g)),
            ImageSource::Path(p) => Ok(std::borrow::Cow::Owned(ImageGrid::read_pnm(p)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_round_trip() {
        let g = ImageGrid::new(2, 3, 2, (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let back = ImageGrid::from_nested(&g.to_nested()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(ImageGrid::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageGrid::new(0, 1, 1, vec![]).is_err());
        assert!(ImageGrid::from_nested(&[]).is_err());
    }

    #[test]
    fn pnm_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..2 * 2 * 3).map(|v| (v * 20) as f64 / 255.0).collect();
        let rgb = ImageGrid::new(2, 2, 3, data).unwrap();
        let p6 = dir.path().join("x.ppm");
        rgb.write_pnm(&p6).unwrap();
        assert_eq!(ImageGrid::read_pnm(&p6).unwrap(), rgb);

        let gray = ImageGrid::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let p5 = dir.path().join("x.pgm");
        gray.write_pnm(&p5).unwrap();
        assert_eq!(ImageGrid::read_pnm(&p5).unwrap(), gray);
    }
}
