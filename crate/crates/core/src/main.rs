use std::io::{stderr, stdout};

fn main() {
    let code = wncs::cli::main_with_args(std::env::args_os(), &mut stdout().lock(), &mut stderr());
    std::process::exit(code);
}
