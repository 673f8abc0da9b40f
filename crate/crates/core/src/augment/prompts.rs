//! Prompt templates. Rendering is plain concatenation so substituted text is
//! never re-interpreted as a placeholder.

use crate::error::{Error, Result};

const COT_HEAD: &str = "Rewrite the following answer using a **Chain of Thought (CoT)** approach. The final answers should adhere to the following structure and constraints:

1. **Problem Restatement**: Start by restating the problem clearly to set the context.

2. **Step-by-Step Process**:
- **Explicit Steps**: Break the solution into **discrete steps**, showing all calculations.
- **Justifications**: Include a brief explanation for each step (e.g., referencing mathematical rules such as the distributive property, derivative rules, or solving equations).

3. **Mathematical Principles**: Where relevant, mention the specific mathematical principles or theorems being applied (e.g., chain rule, Pythagoras' theorem, etc.).

4. **Final Answer**: End with the final solution, clearly boxed or highlighted.

5. **Consistent Structure**: Ensure every solution follows this format:
- **Restatement of the problem**
- **Steps and calculations with justifications**
- **Final answer**

The output should be detailed but concise, explaining each step logically while avoiding excessive repetition. Clarity and logical flow are crucial.

Here is a question and answer pair of this image:
Question: ";

const JUDGE_HEAD: &str = "Please evaluate if the correctness of my answer based on the provided question and the correct answer.

Question: ";

const JUDGE_TAIL: &str = "

Please only return \"True\" if my answer is correct, or \"False\" if it is incorrect.
My answer is:";

fn require(name: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        Err(Error::invalid(format!("{name} must be nonempty")))
    } else {
        Ok(())
    }
}

pub fn render_cot_prompt(question: &str, answer: &str) -> Result<String> {
    require("question", question)?;
    require("answer", answer)?;
    Ok(format!("{COT_HEAD}{question}\nAnswer: {answer}\n"))
}

pub fn render_judge_prompt(question: &str, original_answer: &str, new_answer: &str) -> Result<String> {
    require("question", question)?;
    require("original answer", original_answer)?;
    require("new answer", new_answer)?;
    Ok(format!(
        "{JUDGE_HEAD}{question}\nCorrect Answer: {original_answer}\nMy Answer: {new_answer}{JUDGE_TAIL}"
    ))
}

pub fn render_expand_prompt(question: &str, answer: &str) -> Result<String> {
    require("question", question)?;
    require("answer", answer)?;
    Ok(format!(
        "Given the question {question}. The original answer is {answer}.\nPlease reply with a more specific answer based on the existing answer, as detailed as possible."
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVerdict {
    Accept,
    Reject,
    Unparseable,
}

/// Trim, drop surrounding quotes, compare case-insensitively.
pub fn parse_judge(text: &str) -> JudgeVerdict {
    let t = text.trim();
    let t = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .or_else(|| t.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')))
        .unwrap_or(t)
        .trim();
    if t.eq_ignore_ascii_case("true") {
        JudgeVerdict::Accept
    } else if t.eq_ignore_ascii_case("false") {
        JudgeVerdict::Reject
    } else {
        JudgeVerdict::Unparseable
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cot_shape() {
        let p = render_cot_prompt("Q1", "A1").unwrap();
        assert!(p.starts_with("Rewrite the following answer using a **Chain of Thought (CoT)** approach"));
        assert!(p.contains("Question: Q1"));
        assert!(p.contains("Answer: A1"));
        assert_eq!(p, render_cot_prompt("Q1", "A1").unwrap());
    }

    #[test]
    fn cot_keeps_newlines_and_braces() {
        let p = render_cot_prompt("line1\nline2 {answer}", "A").unwrap();
        assert!(p.contains("Question: line1\nline2 {answer}\nAnswer: A\n"));
    }

    #[test]
    fn judge_shape() {
        let p = render_judge_prompt("q", "a0", "a1").unwrap();
        assert!(p.contains("Correct Answer: a0"));
        assert!(p.contains("My Answer: a1"));
        assert!(p.ends_with("My answer is:"));
        assert!(render_judge_prompt("q", "a0", "").is_err());
    }

    #[test]
    fn expand_shape() {
        let p = render_expand_prompt("q", "a").unwrap();
        assert!(p.contains("The original answer is a"));
        let p = render_expand_prompt("Что это?", "кошка 🐱").unwrap();
        assert!(p.contains("кошка 🐱"));
    }

    #[test]
    fn judge_parsing() {
        assert_eq!(parse_judge("True"), JudgeVerdict::Accept);
        assert_eq!(parse_judge("  false\n"), JudgeVerdict::Reject);
        assert_eq!(parse_judge("\"TRUE\""), JudgeVerdict::Accept);
        assert_eq!(parse_judge("The answer is correct."), JudgeVerdict::Unparseable);
        assert_eq!(parse_judge(""), JudgeVerdict::Unparseable);
    }
}
