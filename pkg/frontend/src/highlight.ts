/**
 * Mention highlighting for result sentences.
 *
 * Wraps every case-insensitive occurrence of the mention surface in a
 * <mark> element. Built from text nodes, never from markup strings, so
 * sentence content cannot inject HTML.
 */

export function highlightSurface(sentence: string, surface: string): DocumentFragment {
  const fragment = document.createDocumentFragment();
  if (!surface) {
    fragment.append(sentence);
    return fragment;
  }
  const haystack = sentence.toLowerCase();
  const needle = surface.toLowerCase();
  let last = 0;
  let at = haystack.indexOf(needle);
  while (at !== -1) {
    if (at > last) {
      fragment.append(sentence.slice(last, at));
    }
    const mark = document.createElement("mark");
    mark.textContent = sentence.slice(at, at + surface.length);
    fragment.append(mark);
    last = at + surface.length;
    at = haystack.indexOf(needle, last);
  }
  if (last < sentence.length) {
    fragment.append(sentence.slice(last));
  }
  return fragment;
}
