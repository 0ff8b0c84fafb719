//! Counts heap allocations made by the steady-state streaming path.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tonegan::generator::{Generator, GeneratorConfig};
use tonegan::streaming::StreamState;

struct Counting;

static ARMED: AtomicBool = AtomicBool::new(false);
static COUNT: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if ARMED.load(Ordering::Relaxed) {
            COUNT.fetch_add(1, Ordering::Relaxed);
        }
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if ARMED.load(Ordering::Relaxed) {
            COUNT.fetch_add(1, Ordering::Relaxed);
        }
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn process_does_not_allocate_after_warm_up() {
    let g = Generator::<f32>::init(GeneratorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut s = StreamState::new(Arc::new(g)).unwrap();
    let x: Vec<f32> = (0..4096).map(|i| (i as f32 * 0.01).sin() * 0.3).collect();
    let mut y = vec![0.0f32; x.len()];
    s.process(&x[..512], &mut y[..512]);

    ARMED.store(true, Ordering::SeqCst);
    for (xb, yb) in x.chunks(512).zip(y.chunks_mut(512)) {
        s.process(xb, yb);
    }
    s.process(&x[..1], &mut y[..1]);
    s.process(&x[..1000], &mut y[..1000]);
    ARMED.store(false, Ordering::SeqCst);
    assert_eq!(COUNT.load(Ordering::SeqCst), 0);
}
