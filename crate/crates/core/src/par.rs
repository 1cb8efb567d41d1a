//! Data-parallel helpers. With the `parallel` feature the closures run on
//! the rayon pool; without it they run in order on the calling thread.
//! Results always come back in input order so reductions stay
//! bit-deterministic whatever the thread count.

/// How a batch of independent jobs is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    #[default]
    Parallel,
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<R, F>(n: usize, mode: Mode, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Configure the global pool. Returns `false` if it was already built.
pub fn init_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// Worker threads that [`Mode::Parallel`] will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Run `f` with subnormal floats flushed to zero (x86-64 FTZ and DAZ), then
/// restore the previous mode. Saturated softmax outputs otherwise push
/// whole activation maps into the slow subnormal range.
pub fn flush_denormals<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        const FTZ_DAZ: u32 = 0x8040;
        let mut saved: u32 = 0;
        // SAFETY: stmxcsr/ldmxcsr only read and write the SSE control
        // register of the current thread.
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut saved, options(nostack));
            let set = saved | FTZ_DAZ;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &set, options(nostack, readonly));
        }
        let out = f();
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &saved, options(nostack, readonly));
        }
        out
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        f()
    }
}
