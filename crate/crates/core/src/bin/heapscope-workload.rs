//! Workload driver for exercising the preloadable shim.
//!
//! Talks to libc directly so the interesting allocator traffic is explicit,
//! and looks up the embedder API dynamically so the same binary runs with
//! and without the shim preloaded.
//!
//! Modes:
//!
//! ```text
//!   churn <iters> <size>      malloc/free pairs; prints elapsed_ns=N
//!   bigalloc <bytes>          one large allocation, touched page by page
//!   copy <count> <bytes>      memcpy between two buffers
//!   safepoints <iters>        spin ~1ms then call heapscope_safepoint()
//!   mixed <iters>             managed-domain churn with callsite hooks
//!   stress <iters>            verifying allocator stress across all entry points
//!   threads <n> <iters>       concurrent churn on n threads
//!   crash do-it               allocate then abort, for crash-log tests
//! ```

use std::ffi::c_void;
use std::time::Instant;

type SetCallsite = unsafe extern "C" fn(*const i8, u32) -> i32;
type DomainPush = unsafe extern "C" fn(i32) -> i32;
type DomainPop = unsafe extern "C" fn() -> i32;
type Safepoint = unsafe extern "C" fn();

fn lookup<T>(name: &[u8]) -> Option<T> {
    assert_eq!(name.last(), Some(&0), "need NUL-terminated symbol name");
    let sym = unsafe { libc::dlsym(libc::RTLD_DEFAULT, name.as_ptr().cast()) };
    if sym.is_null() {
        None
    } else {
        Some(unsafe { std::mem::transmute_copy::<*mut c_void, T>(&sym) })
    }
}

fn churn(iters: u64, max_size: usize) {
    let max_size = max_size.max(16);
    let mut lcg = 0x2545F4914F6CDD1Du64;
    let mut sink = 0u64;
    let started = Instant::now();
    for _ in 0..iters {
        // size cycles over small classes so the run exercises more than one
        // tcache bin, like real allocation-heavy code
        lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let size = 16 + (lcg >> 33) as usize % max_size;
        unsafe {
            let p = std::hint::black_box(libc::malloc(size));
            assert!(!p.is_null());
            // write the allocation, as consuming code would, and read a
            // byte back so the pair cannot be elided
            std::ptr::write_bytes(p.cast::<u8>(), 0xA5, size);
            sink ^= std::ptr::read_volatile(p.cast::<u8>().add(size / 2)) as u64;
            libc::free(p);
        }
    }
    println!("elapsed_ns={} sink={sink}", started.elapsed().as_nanos());
}

fn bigalloc(bytes: usize) {
    let set_callsite: Option<SetCallsite> = lookup(b"heapscope_set_callsite\0");
    if let Some(f) = set_callsite {
        unsafe {
            f(c"workload.rs".as_ptr(), 54);
        }
    }
    unsafe {
        let p = libc::malloc(bytes);
        assert!(!p.is_null());
        let mut offset = 0;
        while offset < bytes {
            std::ptr::write_volatile(p.cast::<u8>().add(offset), 0xAB);
            offset += 4096;
        }
        println!("allocated={bytes}");
        libc::free(p);
    }
}

fn copy(count: u64, bytes: usize) {
    let set_callsite: Option<SetCallsite> = lookup(b"heapscope_set_callsite\0");
    if let Some(f) = set_callsite {
        unsafe {
            f(c"workload.rs".as_ptr(), 73);
        }
    }
    unsafe {
        let src = std::hint::black_box(libc::malloc(bytes));
        let dst = std::hint::black_box(libc::malloc(bytes));
        assert!(!src.is_null() && !dst.is_null());
        libc::memset(src, 0x5A, bytes);
        let mut sink = 0u8;
        for i in 0..count {
            libc::memcpy(dst, src, bytes);
            // observe the copy so the loop cannot be elided
            sink ^= std::ptr::read_volatile(dst.cast::<u8>().add(i as usize % bytes));
        }
        println!("copied={} sink={sink}", count as u128 * bytes as u128);
        libc::free(src);
        libc::free(dst);
    }
}

type SetThreadStatus = unsafe extern "C" fn(i32) -> i32;
type SetInCall = unsafe extern "C" fn(i32) -> i32;

fn safepoints(iters: u64) {
    let safepoint: Option<Safepoint> = lookup(b"heapscope_safepoint\0");
    let set_callsite: Option<SetCallsite> = lookup(b"heapscope_set_callsite\0");
    if let Some(f) = set_callsite {
        unsafe {
            f(c"workload.rs".as_ptr(), 88);
        }
    }

    // a worker that registers itself as executing-in-native-call, so timer
    // samples carry a thread snapshot
    let (stop_tx, stop_rx) = std::sync::mpsc::channel::<()>();
    let worker = std::thread::spawn(move || {
        let set_status: Option<SetThreadStatus> = lookup(b"heapscope_set_thread_status\0");
        let set_in_call: Option<SetInCall> = lookup(b"heapscope_set_in_call\0");
        let set_callsite: Option<SetCallsite> = lookup(b"heapscope_set_callsite\0");
        unsafe {
            if let Some(f) = set_callsite {
                f(c"worker.rs".as_ptr(), 9);
            }
            if let Some(f) = set_status {
                assert_eq!(f(0), 0, "executing");
            }
            if let Some(f) = set_in_call {
                assert_eq!(f(1), 0, "in native call");
            }
        }
        let _ = stop_rx.recv();
    });

    let mut sink = 0u64;
    for _ in 0..iters {
        let spin = Instant::now();
        while spin.elapsed().as_micros() < 1000 {
            sink = sink.wrapping_mul(6364136223846793005).wrapping_add(1);
        }
        if let Some(f) = safepoint {
            unsafe { f() };
        }
    }
    let _ = stop_tx.send(());
    worker.join().unwrap();
    println!("sink={sink}");
}

fn mixed(iters: u64) {
    let set_callsite: Option<SetCallsite> = lookup(b"heapscope_set_callsite\0");
    let push: Option<DomainPush> = lookup(b"heapscope_domain_push\0");
    let pop: Option<DomainPop> = lookup(b"heapscope_domain_pop\0");

    // API error contract, checked in-process when the shim is loaded
    if let (Some(push), Some(pop), Some(set)) = (push, pop, set_callsite) {
        unsafe {
            assert_eq!(pop(), -2, "pop on empty domain stack");
            assert_eq!(push(7), -1, "unknown domain tag");
            assert_eq!(set(std::ptr::null(), 5), -1, "null file");
            assert_eq!(set(c"x.rs".as_ptr(), 0), -1, "zero line");
            for _ in 0..32 {
                assert_eq!(push(0), 0);
            }
            assert_eq!(push(0), -2, "domain stack overflow");
            for _ in 0..32 {
                assert_eq!(pop(), 0);
            }
        }
    }
    for i in 0..iters {
        if let Some(f) = set_callsite {
            unsafe {
                f(c"workload.rs".as_ptr(), 100 + (i % 3) as u32);
            }
        }
        unsafe {
            if let Some(f) = push {
                f(1); // managed scope
            }
            let p = libc::malloc(4096);
            std::ptr::write_volatile(p.cast::<u8>(), 1);
            if let Some(f) = pop {
                f();
            }
            libc::free(p);
        }
    }
    println!("done={iters}");
}

fn threads(n: u64, iters: u64) {
    let handles: Vec<_> = (0..n)
        .map(|worker| {
            std::thread::spawn(move || {
                let size = 128 + 32 * worker as usize;
                for _ in 0..iters {
                    unsafe {
                        let p = std::hint::black_box(libc::malloc(size));
                        assert!(!p.is_null());
                        std::ptr::write_volatile(p.cast::<u8>(), worker as u8);
                        libc::free(p);
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    println!("threads_done={n}");
}

fn crash() {
    unsafe {
        for _ in 0..100 {
            let p = libc::malloc(8192);
            std::ptr::write_volatile(p.cast::<u8>(), 1);
            // leaked on purpose; the abort must catch live records
        }
        libc::abort();
    }
}

/// Allocator stress: random malloc/calloc/realloc/posix_memalign/
/// aligned_alloc traffic with content verification, so a broken shim shows
/// up as corruption, not just bad numbers.
fn stress(iters: u64) {
    struct Live {
        ptr: *mut u8,
        size: usize,
        fill: u8,
    }
    let mut live: Vec<Live> = Vec::new();
    let mut lcg = 0x9E3779B97F4A7C15u64;
    let mut rand = move || {
        lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lcg >> 16
    };
    let verify = |a: &Live| {
        for offset in [0, a.size / 2, a.size - 1] {
            let got = unsafe { std::ptr::read_volatile(a.ptr.add(offset)) };
            assert_eq!(got, a.fill, "corruption at {:p}+{offset}", a.ptr);
        }
    };
    for i in 0..iters {
        let r = rand();
        let size = 1 + (r as usize % 8192);
        let fill = (i % 251) as u8 + 1;
        match r % 6 {
            0 | 1 => unsafe {
                let ptr = libc::malloc(size).cast::<u8>();
                assert!(!ptr.is_null());
                std::ptr::write_bytes(ptr, fill, size);
                live.push(Live { ptr, size, fill });
            },
            2 => unsafe {
                let ptr = libc::calloc(1, size).cast::<u8>();
                assert!(!ptr.is_null());
                for offset in 0..size.min(64) {
                    assert_eq!(*ptr.add(offset), 0, "calloc not zeroed");
                }
                std::ptr::write_bytes(ptr, fill, size);
                live.push(Live { ptr, size, fill });
            },
            3 => unsafe {
                let align = 1usize << (4 + r % 8); // 16..=2048
                let mut ptr: *mut libc::c_void = std::ptr::null_mut();
                let rc = libc::posix_memalign(&mut ptr, align, size);
                assert_eq!(rc, 0);
                assert_eq!(ptr as usize % align, 0, "misaligned");
                let ptr = ptr.cast::<u8>();
                std::ptr::write_bytes(ptr, fill, size);
                live.push(Live { ptr, size, fill });
            },
            4 if !live.is_empty() => unsafe {
                let pick = r as usize % live.len();
                verify(&live[pick]);
                let new_size = 1 + (rand() as usize % 16384);
                let old = &live[pick];
                let copied = old.size.min(new_size);
                let ptr = libc::realloc(old.ptr.cast(), new_size).cast::<u8>();
                assert!(!ptr.is_null());
                for offset in [0, copied / 2, copied - 1] {
                    assert_eq!(*ptr.add(offset), old.fill, "realloc lost bytes");
                }
                let fill = old.fill;
                std::ptr::write_bytes(ptr, fill, new_size);
                live[pick] = Live { ptr, size: new_size, fill };
            },
            _ if !live.is_empty() => unsafe {
                let pick = r as usize % live.len();
                let a = live.swap_remove(pick);
                verify(&a);
                libc::free(a.ptr.cast());
            },
            _ => {}
        }
    }
    let survivors = live.len();
    for a in &live {
        verify(a);
        unsafe { libc::free(a.ptr.cast()) };
    }
    println!("stress_ok={iters} survivors={survivors}");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let usage = "usage: heapscope-workload churn <iters> <size> | bigalloc <bytes> | copy <count> <bytes> | safepoints <iters> | mixed <iters> | stress <iters> | crash do-it";
    let arg = |i: usize| -> u64 {
        args.get(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| panic!("{usage}"))
    };
    match args.get(1).map(String::as_str) {
        Some("churn") => churn(arg(2), arg(3) as usize),
        Some("bigalloc") => bigalloc(arg(2) as usize),
        Some("copy") => copy(arg(2), arg(3) as usize),
        Some("safepoints") => safepoints(arg(2)),
        Some("mixed") => mixed(arg(2)),
        Some("stress") => stress(arg(2)),
        Some("threads") => threads(arg(2), arg(3)),
        Some("crash") => crash(),
        _ => {
            eprintln!("{usage}");
            std::process::exit(2);
        }
    }
}
