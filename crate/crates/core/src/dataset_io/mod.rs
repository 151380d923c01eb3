// SPDX-License-Identifier: Apache-2.0

//! Image decoding, dataset manifests and the binary fingerprint bundle.

mod bundle;
mod image;
mod manifest;

pub use self::bundle::{decode_bundle, max_abs_row_col_mean, encode_bundle, load_bundle, save_bundle, FingerprintBundle, PostprocessFlags};
pub use self::image::{load_image, luminance, save_graymap};
pub use self::manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestEntry, Role};
