#[global_allocator]
static ALLOC: s2ut::measure::TrackingAllocator = s2ut::measure::TrackingAllocator;

fn main() {
    std::process::exit(s2ut::cli::run(std::env::args_os()));
}
