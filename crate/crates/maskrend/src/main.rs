fn main() {
    let code = maskrend::cli::dispatch(std::env::args().skip(1));
    std::process::exit(code);
}
