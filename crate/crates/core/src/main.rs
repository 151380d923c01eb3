// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(prnuleak::cli::run_from(std::env::args_os()));
}
