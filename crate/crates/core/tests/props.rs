//! Property tests for the structural invariants: tiling is a bijection on
//! the unpadded region, and packed token streams parse back exactly.

use melpatch_core::bitstream::{pack, unpack, BitReader, BitWriter, CodecHeader};
use melpatch_core::frontend::{FrontendConfig, MelSpectrogram};
use melpatch_core::patch::{grid_dims, patchify, unpatchify, PatchGridSpec};
use melpatch_core::vq::TokenGrid;
use proptest::prelude::*;

fn mel_strategy() -> impl Strategy<Value = (MelSpectrogram, PatchGridSpec)> {
    // bands divisible by patch_f by construction
    (1usize..=5, 1usize..=4, 1usize..=6, 1usize..=14).prop_flat_map(
        |(patch_f, patch_t, cols, frames)| {
            let bands = patch_f * cols;
            proptest::collection::vec(-80.0f64..10.0, frames * bands).prop_map(
                move |values| {
                    let cfg = FrontendConfig { n_mels: bands, ..Default::default() };
                    let m =
                        MelSpectrogram::from_values(values, frames, bands, cfg).unwrap();
                    (m, PatchGridSpec { patch_t, patch_f, pad_value: -11.512925 })
                },
            )
        },
    )
}

proptest! {
    #[test]
    fn patchify_unpatchify_is_identity((m, spec) in mel_strategy()) {
        let p = patchify(&m, &spec).unwrap();
        let (rows, cols) = grid_dims(m.frames(), m.bands(), &spec).unwrap();
        prop_assert_eq!(p.vectors().rows(), rows);
        prop_assert_eq!(p.vectors().cols(), cols);
        let back = unpatchify(&p, &spec).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn bit_writer_reader_round_trip(values in proptest::collection::vec((1u32..=32, any::<u32>()), 0..80)) {
        let mut w = BitWriter::new();
        let mut masked = Vec::new();
        for &(bits, raw) in &values {
            let v = if bits == 32 { raw } else { raw & ((1 << bits) - 1) };
            masked.push((bits, v));
            w.push(v, bits).unwrap();
        }
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        for &(bits, v) in &masked {
            prop_assert_eq!(r.read(bits).unwrap(), v);
        }
        prop_assert!(r.rest_is_zero());
    }

    #[test]
    fn pack_unpack_round_trip(
        k in 1u32..=5000,
        patch_t in 1u16..=5,
        patch_f_and_cols in (1u16..=5, 1u16..=25),
        original_t in 0u32..=60,
        seed in any::<u64>(),
    ) {
        let (patch_f, cols) = patch_f_and_cols;
        let n_mels = patch_f * cols;
        let header = CodecHeader {
            sample_rate: 16_000,
            n_mels,
            hop: 128,
            win_length: 512,
            patch_t,
            patch_f,
            k,
            codebook_digest: seed.to_le_bytes(),
            original_t,
        };
        let (rows, cols) = header.grid_shape();
        // cheap deterministic indices in range
        let indices: Vec<u32> =
            (0..rows * cols).map(|i| (seed.wrapping_add(i as u64 * 2654435761) % k as u64) as u32).collect();
        let grid = TokenGrid::new(rows, cols, original_t as usize, indices).unwrap();
        let bytes = pack(&grid, &header).unwrap();
        let (h2, g2) = unpack(&bytes).unwrap();
        prop_assert_eq!(h2, header);
        prop_assert_eq!(g2, grid);
    }
}
