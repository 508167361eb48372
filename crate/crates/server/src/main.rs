fn main() {
    let code = kgforage_server::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
