//! Round-trip a teacher table, a student policy and a demo dataset through
//! their JSON documents.

use asym_distill::il::collect_demos;
use asym_distill::store::{bc_fit, load_dataset, load_policy, save_dataset, save_policy, PolicyDocument};
use asym_distill::teacher::plan_teacher;
use asym_distill::{make_env, EnvConfig, RngStream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("asym-distill-policy-files");
    std::fs::create_dir_all(&dir)?;

    let env = make_env(&EnvConfig::line_search(3))?;
    let tp = plan_teacher(&env)?;
    let (ds, _) = collect_demos(&env, &tp, 30, &mut RngStream::from_id(9))?;
    let student = bc_fit(&ds, 0.0)?;

    let teacher_path = dir.join("teacher.json");
    let student_path = dir.join("student.json");
    let data_path = dir.join("demos.json");
    save_policy(&teacher_path, &PolicyDocument::Teacher(tp.clone()))?;
    save_policy(&student_path, &PolicyDocument::Tabular(student.clone()))?;
    save_dataset(&data_path, &ds)?;

    let PolicyDocument::Tabular(back) = load_policy(&student_path)? else {
        unreachable!("saved a tabular policy")
    };
    assert_eq!(back.fingerprint(), student.fingerprint());
    assert_eq!(load_policy(&teacher_path)?, PolicyDocument::Teacher(tp));
    assert_eq!(load_dataset(&data_path)?, ds);

    for p in [&teacher_path, &student_path, &data_path] {
        let bytes = std::fs::metadata(p)?.len();
        println!("{} ({bytes} bytes)", p.display());
    }
    // ridge 0 leaves -inf logits for actions the teacher never took
    let text = std::fs::read_to_string(&student_path)?;
    println!("{}", text.lines().take(12).collect::<Vec<_>>().join("\n"));
    Ok(())
}
