#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::image::GrayImage;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = GrayImage::from_pgm(data) {
        assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
    }
});
