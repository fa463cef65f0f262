//! Shared fixtures for the benchmarks in `benches/`.

use vidinpaint_core::data::sprites::gen_sprites;
use vidinpaint_core::data::SpriteWorld;
use vidinpaint_core::denoiser::{init_params, NetArch, Network};
use vidinpaint_core::masks::generate_mask;
use vidinpaint_core::{rng, MaskSpec, PixelMask, Video};

/// Desk-sized network with non-trivial weights.
pub fn desk_network(seed: u64) -> Network {
    let arch = NetArch::default();
    let mut p = init_params(&arch, seed).expect("default arch is valid");
    let mut r = rng::stream(seed, 1);
    for w in p.theta.iter_mut() {
        *w += 0.05 * rng::box_muller(&mut r);
    }
    p.network()
}

/// One desk sprite video and a random mask for it.
pub fn desk_video(seed: u64) -> (Video, PixelMask) {
    let world = SpriteWorld::desk(seed);
    let v = gen_sprites(&world, 1).expect("desk world").videos.remove(0);
    let s = v.shape();
    let m = generate_mask(&MaskSpec::random(seed), s.frames, s.height, s.width).expect("desk mask");
    (v, m)
}
