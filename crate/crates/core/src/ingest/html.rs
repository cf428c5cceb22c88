//! Minimal HTML to text extraction.
//!
//! Not a conforming HTML parser: it scans for tags, drops `script`/`style`
//! bodies and comments, turns block-level boundaries into newlines and decodes
//! the common character references. A `<` that does not start a tag is kept
//! as text.

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "br", "caption", "dd", "details",
    "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1",
    "h2", "h3", "h4", "h5", "h6", "head", "header", "hr", "html", "li", "main", "nav", "ol",
    "p", "pre", "section", "summary", "table", "tbody", "tfoot", "thead", "title", "tr", "ul",
];

const CELL_TAGS: &[&str] = &["td", "th"];

const RAW_TEXT_TAGS: &[&str] = &["script", "style"];

/// Extracts visible text. The output is not normalized; callers run
/// [`normalize_text`](super::normalize_text) afterwards.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::with_capacity(html.len() / 2);
    let mut rest = html;

    while let Some(lt) = rest.find(['<', '&']) {
        out.push_str(&rest[..lt]);
        rest = &rest[lt..];

        if rest.starts_with('&') {
            let (decoded, used) = decode_entity(rest);
            out.push_str(&decoded);
            rest = &rest[used..];
            continue;
        }

        if let Some(after) = rest.strip_prefix("<!--") {
            rest = after.find("-->").map_or("", |end| &after[end + 3..]);
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            rest = rest.find('>').map_or("", |end| &rest[end + 1..]);
            continue;
        }

        let Some(tag) = parse_tag(rest) else {
            out.push('<');
            rest = &rest[1..];
            continue;
        };
        rest = &rest[tag.len..];
        let name = tag.name.to_ascii_lowercase();

        if !tag.closing && RAW_TEXT_TAGS.contains(&name.as_str()) {
            rest = skip_raw_text(rest, &name);
            continue;
        }
        if BLOCK_TAGS.contains(&name.as_str()) {
            out.push('\n');
        } else if CELL_TAGS.contains(&name.as_str()) {
            out.push(' ');
        }
    }
    out.push_str(rest);
    out
}

struct Tag<'a> {
    name: &'a str,
    closing: bool,
    /// Bytes consumed including the closing `>`.
    len: usize,
}

/// Parses `<name ...>` or `</name ...>` at the start of `s`. Quoted attribute
/// values may contain `>`. An unterminated tag consumes the rest of the input.
fn parse_tag(s: &str) -> Option<Tag<'_>> {
    let bytes = s.as_bytes();
    let mut i = 1;
    let closing = bytes.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    if !bytes.get(i).is_some_and(u8::is_ascii_alphabetic) {
        return None;
    }
    while bytes
        .get(i)
        .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'-' || *b == b':')
    {
        i += 1;
    }
    let name = &s[name_start..i];

    let mut quote = None;
    while let Some(&b) = bytes.get(i) {
        match (quote, b) {
            (None, b'>') => {
                return Some(Tag {
                    name,
                    closing,
                    len: i + 1,
                })
            }
            (None, b'"' | b'\'') => quote = Some(b),
            (Some(q), b) if b == q => quote = None,
            _ => {}
        }
        i += 1;
    }
    Some(Tag {
        name,
        closing,
        len: s.len(),
    })
}

fn skip_raw_text<'a>(s: &'a str, name: &str) -> &'a str {
    let needle = format!("</{name}");
    let lower = s.to_ascii_lowercase();
    match lower.find(&needle) {
        Some(pos) => {
            let after = &s[pos..];
            after.find('>').map_or("", |end| &after[end + 1..])
        }
        None => "",
    }
}

/// Decodes one character reference at the start of `s` (which begins with
/// `&`). Unknown references decode to a literal `&`.
fn decode_entity(s: &str) -> (String, usize) {
    let body_end = s[1..]
        .char_indices()
        .take(12)
        .find(|(_, c)| *c == ';')
        .map(|(i, _)| i + 1);
    let Some(end) = body_end else {
        return ("&".into(), 1);
    };
    let body = &s[1..end];
    let decoded = match body {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" | "#39" => Some('\''),
        "nbsp" => Some(' '),
        _ => body.strip_prefix('#').and_then(|num| {
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok(),
                None => num.parse().ok(),
            };
            code.and_then(char::from_u32)
        }),
    };
    match decoded {
        Some(c) => (c.to_string(), end + 1),
        None => ("&".into(), 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::normalize_text;
    use proptest::prelude::*;

    fn extract(html: &str) -> String {
        normalize_text(&html_to_text(html))
    }

    #[test]
    fn strips_inline_tags() {
        assert_eq!(extract("<p>Hello <b>world</b></p>"), "Hello world");
    }

    #[test]
    fn drops_script_style_and_comments() {
        let html = r#"<html><head><style>p { color: red; }</style>
            <script type="text/javascript">if (a < b) { alert("</p>"); }</script></head>
            <body><!-- hidden --><p>Shown</p></body></html>"#;
        assert_eq!(extract(html), "Shown");
    }

    #[test]
    fn blocks_become_lines() {
        let html = "<h1>Title</h1><div>one</div><ul><li>a</li><li>b</li></ul>x<br>y";
        assert_eq!(extract(html), "Title\none\na\nb\nx\ny");
        assert_eq!(
            extract("<table><tr><td>a</td><td>b</td></tr></table>"),
            "a b"
        );
    }

    #[test]
    fn entities_and_stray_angle_brackets() {
        assert_eq!(extract("a &lt; b &amp;&amp; c &#65;&#x42;"), "a < b && c AB");
        assert_eq!(extract("1 < 2 and 3 <= 4"), "1 < 2 and 3 <= 4");
        assert_eq!(extract("fish &chips; &unknown"), "fish &chips; &unknown");
        assert_eq!(extract(r#"<a href="x>y">link</a>"#), "link");
    }

    #[test]
    fn case_insensitive_raw_text() {
        assert_eq!(extract("<SCRIPT>var x;</SCRIPT>after"), "after");
    }

    /// Reference tree for generated documents: rendered to HTML by one path
    /// and to text directly by another.
    #[derive(Debug, Clone)]
    enum Node {
        Text(String),
        Elem(&'static str, Vec<Node>),
    }

    const TAGS: &[&str] = &["p", "div", "b", "i", "span", "li", "script", "style", "em"];

    fn render_html(n: &Node, out: &mut String) {
        match n {
            Node::Text(t) => out.push_str(t),
            Node::Elem(tag, kids) => {
                out.push_str(&format!("<{tag} class=\"c\">"));
                for k in kids {
                    render_html(k, out);
                }
                out.push_str(&format!("</{tag}>"));
            }
        }
    }

    fn render_text(n: &Node, out: &mut String) {
        match n {
            Node::Text(t) => out.push_str(t),
            Node::Elem("script" | "style", _) => {}
            Node::Elem(tag, kids) => {
                let block = matches!(*tag, "p" | "div" | "li");
                if block {
                    out.push('\n');
                }
                for k in kids {
                    render_text(k, out);
                }
                if block {
                    out.push('\n');
                }
            }
        }
    }

    fn node() -> impl Strategy<Value = Node> {
        let leaf = "[a-z ]{0,8}".prop_map(Node::Text);
        leaf.prop_recursive(4, 32, 4, |inner| {
            (prop::sample::select(TAGS), prop::collection::vec(inner, 0..4))
                .prop_map(|(t, kids)| Node::Elem(t, kids))
        })
    }

    proptest! {
        #[test]
        fn matches_reference_stripper(root in node()) {
            // raw-text elements must not nest tags, as in real HTML
            fn flatten_raw(n: Node) -> Node {
                match n {
                    Node::Elem(t @ ("script" | "style"), _) => {
                        Node::Elem(t, vec![Node::Text("x < y".into())])
                    }
                    Node::Elem(t, kids) => Node::Elem(t, kids.into_iter().map(flatten_raw).collect()),
                    leaf => leaf,
                }
            }
            let root = flatten_raw(root);
            let mut html = String::new();
            render_html(&root, &mut html);
            let mut expected = String::new();
            render_text(&root, &mut expected);

            let got = extract(&html);
            prop_assert_eq!(&got, &normalize_text(&expected));
            prop_assert!(!got.contains('<'));
        }
    }
}
