use std::io::{self, Read};

const SOI: [u8; 2] = [0xFF, 0xD8];
const EOI: [u8; 2] = [0xFF, 0xD9];

/// Splits a byte stream of concatenated JPEG images (an `.mjpeg` file or the
/// body of a `multipart/x-mixed-replace` response) into individual images.
/// Bytes outside SOI..EOI, such as multipart boundaries and headers, are skipped.
pub struct JpegSplitter<R> {
    reader: R,
    buf: Vec<u8>,
    scanned: usize,
    in_image: bool,
    eof: bool,
}

impl<R: Read> JpegSplitter<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            buf: Vec::with_capacity(1 << 16),
            scanned: 0,
            in_image: false,
            eof: false,
        }
    }

    fn fill(&mut self) -> io::Result<bool> {
        let mut chunk = [0u8; 1 << 15];
        let n = self.reader.read(&mut chunk)?;
        if n == 0 {
            self.eof = true;
            return Ok(false);
        }
        self.buf.extend_from_slice(&chunk[..n]);
        Ok(true)
    }

    fn find_marker(&self, marker: [u8; 2], from: usize) -> Option<usize> {
        self.buf[from..]
            .windows(2)
            .position(|w| w == marker)
            .map(|p| p + from)
    }

    /// Next complete JPEG, or `None` at end of stream. A trailing truncated image is discarded.
    pub fn next_image(&mut self) -> io::Result<Option<Vec<u8>>> {
        loop {
            if !self.in_image {
                if let Some(start) = self.find_marker(SOI, 0) {
                    self.buf.drain(..start);
                    self.in_image = true;
                    self.scanned = 2;
                    continue;
                }
                // keep a possible split marker byte
                let keep = usize::from(self.buf.last() == Some(&0xFF));
                let cut = self.buf.len() - keep;
                self.buf.drain(..cut);
            } else if let Some(end) = self.find_marker(EOI, self.scanned) {
                let image: Vec<u8> = self.buf.drain(..end + 2).collect();
                self.in_image = false;
                self.scanned = 0;
                return Ok(Some(image));
            } else {
                self.scanned = self.buf.len().saturating_sub(1).max(2);
            }
            if self.eof || !self.fill()? {
                return Ok(None);
            }
        }
    }
}

impl<R: Read> Iterator for JpegSplitter<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_image().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Trickle<'a>(&'a [u8]);

    impl Read for Trickle<'_> {
        fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
            if self.0.is_empty() || out.is_empty() {
                return Ok(0);
            }
            out[0] = self.0[0];
            self.0 = &self.0[1..];
            Ok(1)
        }
    }

    #[test]
    fn splits_with_boundaries_between_images() {
        let mut stream = b"--frame\r\nContent-Type: image/jpeg\r\n\r\n".to_vec();
        stream.extend_from_slice(&[0xFF, 0xD8, 1, 2, 0xFF, 0x00, 0xFF, 0xD9]);
        stream.extend_from_slice(b"\r\n--frame\r\n\r\n");
        stream.extend_from_slice(&[0xFF, 0xD8, 9, 0xFF, 0xD9]);
        stream.extend_from_slice(&[0xFF, 0xD8, 7]); // truncated tail
        for images in [
            JpegSplitter::new(&stream[..]).collect::<io::Result<Vec<_>>>().unwrap(),
            JpegSplitter::new(Trickle(&stream)).collect::<io::Result<Vec<_>>>().unwrap(),
        ] {
            assert_eq!(
                images,
                vec![
                    vec![0xFF, 0xD8, 1, 2, 0xFF, 0x00, 0xFF, 0xD9],
                    vec![0xFF, 0xD8, 9, 0xFF, 0xD9]
                ]
            );
        }
    }
}
